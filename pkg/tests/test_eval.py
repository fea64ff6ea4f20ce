import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad, trapezoid

from robust_tpp.em import FitConfig, fit
from robust_tpp.eval import (DetectionGroundTruth, comparison_rate,
                             expected_log_likelihood_optimum, gradient_ratio_experiment,
                             homogeneous_design, homogeneous_gradient_draws,
                             integrated_weight_index, l1_errors, outlier_delta, purity,
                             smoothed_intensity, tpr_tnr)
from robust_tpp.influence import InfluenceShape, RhoPair, phi_prime_scaled
from robust_tpp.intensity import BasisSpec, EventSequence, HorizonSpec, baseline_values
from robust_tpp.simulate import TrueIntensitySpec, benchmark_design
from robust_tpp.weights import write_weight_csv

# compensator band where the default kernel exceeds 0.6 (mpmath, 30 digits)
KEPT_LO = 0.194744032138
KEPT_HI = 2.89316397477


# ---------------------------------------------------------------------------
# purity
# ---------------------------------------------------------------------------

def test_purity_examples():
    assert purity([0, 0, 1, 1], [0, 0, 1, 1]) == 1.0
    assert purity([0, 0, 0, 0], [0, 0, 1, 1]) == 0.5
    assert purity([0, 1, 2, 3], [0, 0, 1, 1]) == 1.0
    assert purity([0, 0, 1, 1, 1], [1, 1, 0, 0, 1]) == pytest.approx(4 / 5)


def test_purity_errors():
    with pytest.raises(ValueError):
        purity([0, 1], [0])
    with pytest.raises(ValueError):
        purity([], [])


@given(st.lists(st.integers(0, 4), min_size=1, max_size=40), st.integers(0, 100))
def test_purity_properties(truth, seed):
    rng = np.random.default_rng(seed)
    pred = rng.integers(0, 4, len(truth))
    p = purity(pred, truth)
    assert 1.0 / len(truth) <= p <= 1.0
    # relabelling predicted clusters does not change purity
    perm = rng.permutation(10)
    assert purity(perm[pred], truth) == p
    # a clustering identical to the truth is perfectly pure
    assert purity(truth, truth) == 1.0


# ---------------------------------------------------------------------------
# detection rates
# ---------------------------------------------------------------------------

def _det(weights, windows=((2.0, 4.0),), alpha=0.6):
    starts = [np.array([0.0, 1.0, 3.0, 6.0])]
    ends = [np.array([1.0, 3.0, 6.0, 10.0])]
    return DetectionGroundTruth(starts, ends, [np.asarray(weights, float)], [list(windows)],
                                alpha, 0.0, 10.0)


def test_tpr_tnr_trivial_cases():
    none = tpr_tnr(_det([1.0, 1.0, 1.0, 1.0]))
    assert none["mean_tpr"] == 0.0 and none["mean_tnr"] == 1.0
    every = tpr_tnr(_det([0.0, 0.0, 0.0, 0.0]))
    assert every["mean_tpr"] == 1.0 and every["mean_tnr"] == 0.0


def test_tpr_tnr_partial_overlap():
    # interval [1, 3) flagged: covers 1 of 2 contaminated and 1 of 8 clean units
    out = tpr_tnr(_det([1.0, 0.1, 1.0, 1.0]))
    assert out["mean_tpr"] == pytest.approx(0.5)
    assert out["mean_tnr"] == pytest.approx(7 / 8)


def test_uncontaminated_sequence_has_no_tpr():
    out = tpr_tnr(_det([1.0, 0.1, 1.0, 1.0], windows=()))
    assert np.isnan(out["tpr"][0]) and math.isnan(out["mean_tpr"])
    assert out["mean_tnr"] == pytest.approx(0.8)


@given(st.floats(-50, 50), st.integers(0, 100))
def test_tpr_tnr_translation_invariant(shift, seed):
    rng = np.random.default_rng(seed)
    edges = np.sort(rng.uniform(0, 10, 8))
    starts = np.concatenate(([0.0], edges))
    ends = np.concatenate((edges, [10.0]))
    w = rng.uniform(0, 1, starts.size)
    win = [(2.0, 3.5), (6.0, 7.0)]
    a = tpr_tnr(DetectionGroundTruth([starts], [ends], [w], [win]))
    b = tpr_tnr(DetectionGroundTruth([starts + shift], [ends + shift], [w],
                                     [[(x + shift, y + shift) for x, y in win]]))
    assert a["mean_tpr"] == pytest.approx(b["mean_tpr"], abs=1e-9)
    assert a["mean_tnr"] == pytest.approx(b["mean_tnr"], abs=1e-9)


def test_detection_input_validation():
    with pytest.raises(ValueError):
        DetectionGroundTruth([[0.0]], [[1.0]], [[1.0]], [[]], alpha_tilde=0.0)
    with pytest.raises(ValueError):
        DetectionGroundTruth([[0.0]], [[1.0]], [], [[]])


def test_detection_from_csv_matches_fit(tmp_path):
    ds = benchmark_design("nhpp", L=1, eta=0.2, type_="i", n_per_class=4, seed=2)
    cfg = FitConfig(K=4, basis=BasisSpec.gaussian(24.0, 6), horizon=ds.horizon, max_iter=20)
    res = fit(ds.sequences, cfg)
    path = tmp_path / "weights.csv"
    write_weight_csv(path, ds.sequences, res.weight_tables, ds.horizon)
    a = tpr_tnr(DetectionGroundTruth.from_fit(res, ds.sequences))
    b = tpr_tnr(DetectionGroundTruth.from_weight_csv(
        path, [s.id for s in ds.sequences], res.labels,
        [s.contamination_windows for s in ds.sequences], cfg.alpha_tilde, ds.horizon.T0))
    np.testing.assert_array_equal(a["tpr"], b["tpr"])
    np.testing.assert_array_equal(a["tnr"], b["tnr"])


# ---------------------------------------------------------------------------
# integrated weight index
# ---------------------------------------------------------------------------

def _iw_exact(c, T0, lo, hi):
    """Homogeneous rate ``c`` scored against rate 1: the interval ending at an
    event at time ``s`` has length ``min(X, s)`` with ``X ~ Exp(c)``, giving
    ``h(T0) + c int_0^T0 h(s) ds`` with ``h(s) = E[X 1{lo < X < min(s, hi)}]``."""
    def h(s):
        top = min(s, hi)
        if top <= lo:
            return 0.0
        return quad(lambda x: x * c * math.exp(-c * x), lo, top)[0]
    return h(T0) + c * quad(h, 0.0, T0, points=[lo, hi], limit=200)[0]


def test_kept_band_edges():
    w = phi_prime_scaled(np.array([KEPT_LO, KEPT_HI]) - 1.0)
    np.testing.assert_allclose(w, 0.6, atol=1e-10)


@pytest.mark.parametrize("c", [0.5, 1.0, 2.0])
def test_iw_matches_homogeneous_oracle(c):
    ref = TrueIntensitySpec.constant(1.0)
    sample = TrueIntensitySpec.constant(c)
    mean, se = integrated_weight_index(sample, ref, 0.6, mc_draws=3000, seed=1)
    exact = _iw_exact(c, 24.0, KEPT_LO, KEPT_HI)
    assert abs(mean - exact) < 4 * se


def test_iw_small_threshold_approaches_last_event_time():
    # with a very long kernel tail every interval is kept, so the index is
    # the expected last event time T0 - (1 - exp(-c T0)) / c
    shape = InfluenceShape(1.0, 1e4)
    ref = TrueIntensitySpec.constant(1.0)
    sample = TrueIntensitySpec.constant(0.3)
    mean, se = integrated_weight_index(sample, ref, 1e-12, mc_draws=3000, seed=2, shape=shape)
    exact = 24.0 - (1 - math.exp(-0.3 * 24.0)) / 0.3
    assert abs(mean - exact) < 4 * se


# ---------------------------------------------------------------------------
# homogeneous gradient
# ---------------------------------------------------------------------------

def test_homogeneous_design_layout():
    times = [np.array([0.5, 1.7, 2.0, 4.1]), np.array([]), np.array([3.0])]
    d = homogeneous_design(times, 5.0)
    assert d.n_sequences == 3 and d.seq.size == 5 + 1 + 2
    np.testing.assert_allclose(d.integ[:5, 0], [0.5, 1.2, 0.3, 2.1, 0.9])
    assert d.left[0, 0] == 0.0 and d.left[1, 0] == 1.0


def test_homogeneous_gradient_direct_formula():
    b, T0 = 2.0, 5.0
    rng = np.random.default_rng(0)
    got = homogeneous_gradient_draws(b, T0, replicates=3, seed=0)
    seqs = [np.sort(rng.uniform(0.0, T0, rng.poisson(b * T0))) for _ in range(3)]
    for n, t in enumerate(seqs):
        gaps = np.diff(np.concatenate(([0.0], t)))
        w = phi_prime_scaled(b * gaps - 1.0)
        direct = (w[1:] / b).sum() - (w * gaps).sum()
        assert got[n] == pytest.approx(direct, rel=1e-12, abs=1e-12)


# ---------------------------------------------------------------------------
# gradient ratio
# ---------------------------------------------------------------------------

def test_outlier_families():
    truth = TrueIntensitySpec.benchmark(1)
    t = np.linspace(3.0, 7.0, 9)
    assert np.all(outlier_delta("commission-proportional", 2, truth, 3.0, 0.2, 24.0)(t)
                  == 2 * truth.baseline(t))
    prop = outlier_delta("omission-proportional", 1, truth, 3.0, 0.2, 24.0)(t)
    np.testing.assert_allclose(truth.baseline(t) + prop, truth.baseline(t) / 2)
    with pytest.raises(ValueError):
        outlier_delta("nope", 1, truth, 0.0, 0.2, 24.0)


def test_unit_weight_ratio_is_one():
    out = gradient_ratio_experiment(N=10, replicates=3, unit_weights=True)
    np.testing.assert_allclose(out["ratios"], 1.0, rtol=1e-12)


def test_clean_data_huge_rho_ratio_near_one():
    out = gradient_ratio_experiment(eta=0.0, N=30, replicates=4, rho=RhoPair(1e3, 1e3))
    assert abs(out["mean"] - 1.0) < 0.05


def test_expected_log_likelihood_optimum_kkt():
    truth = TrueIntensitySpec.benchmark(1)
    basis = BasisSpec.gaussian(24.0, 6)
    B = expected_log_likelihood_optimum(truth, basis, grid=4000)
    tau = np.linspace(0.0, 24.0, 4001)
    K = baseline_values(basis, tau)
    lam = K @ B
    wts = np.full(tau.size, 24.0 / 4000)
    wts[[0, -1]] *= 0.5
    grad = K.T @ (wts * (truth.baseline(tau) / lam - 1.0))
    scale = np.abs(K.T @ wts).max()
    assert np.all(B >= 0)
    assert np.all(np.abs(grad[B > 1e-8]) < 1e-5 * scale)
    assert np.all(grad[B <= 1e-8] < 1e-5 * scale)


# ---------------------------------------------------------------------------
# L1 index
# ---------------------------------------------------------------------------

def test_smoother_mass():
    h = HorizonSpec(24.0, 2)
    times = np.array([0.3, 5.0, 23.9, 30.0, 47.5])
    grid = np.linspace(0.0, 24.0, 20001)
    lam = smoothed_intensity(times, h, 4.0, grid)
    assert trapezoid(lam, grid) == pytest.approx(times.size / 2, rel=1e-4)


def test_l1_errors_properties():
    basis = BasisSpec.gaussian(24.0, 6)
    h = HorizonSpec(24.0, 1)
    rng = np.random.default_rng(0)
    seqs = [EventSequence(str(i), np.sort(rng.uniform(0, 24, 30))) for i in range(6)]
    cent = np.vstack([np.ones(6), 3 * np.ones(6)])
    labels = np.array([0, 0, 0, 1, 1, 1])
    out = l1_errors(seqs, cent, labels, basis, h, panels=2000)
    assert out["per_sequence"].shape == (6,)
    assert np.all(out["per_sequence"] >= 0)
    # the truncation drops the largest deviations, so the index is below the
    # plain L1 distance
    grid = np.linspace(0.0, 24.0, 2001)
    full = [trapezoid(np.abs(smoothed_intensity(s.times, h, 4.0, grid)
                             - baseline_values(basis, grid) @ cent[labels[i]]), grid)
            for i, s in enumerate(seqs)]
    assert np.all(out["per_sequence"] <= np.asarray(full) + 1e-9)
    with pytest.raises(ValueError):
        l1_errors(seqs, cent, labels, basis, h, alpha=1.0)


def test_comparison_rate():
    assert comparison_rate([1.0, 2.0, 3.0], [1.0, 3.0, 1.0]) == pytest.approx(1 / 3)
    assert comparison_rate([1.0], [1.0]) == 0.0
    with pytest.raises(ValueError):
        comparison_rate([1.0], [1.0, 2.0])
