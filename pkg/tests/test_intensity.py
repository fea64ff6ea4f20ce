import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad, trapezoid
from scipy.stats import kstest

from robust_tpp.intensity import (BasisSpec, EventSequence, HorizonSpec, baseline_values,
                                  compensator_gaps, design_batch, eval_intensity,
                                  integrate_intensity)
from robust_tpp.simulate import thin_function

H_T = HorizonSpec(24.0, 2)
GAUSS = BasisSpec.gaussian(24.0, 6)
SPLINE = BasisSpec.spline(24.0, 6)
HAWKES = BasisSpec.gaussian(24.0, 6, trigger_H=3, trigger_span=6.0)


def test_horizon_validation():
    assert HorizonSpec(24.0, 3).T0 == 72.0
    for T, L in [(0.0, 1), (24.0, 0), (-1.0, 2)]:
        with pytest.raises(ValueError):
            HorizonSpec(T, L)


def test_sequence_validation():
    with pytest.raises(ValueError):
        EventSequence("a", [2.0, 1.0])
    with pytest.raises(ValueError):
        EventSequence("a", [1.0, 1.0])
    with pytest.raises(ValueError):
        EventSequence("a", [60.0]).validate(H_T)
    with pytest.raises(ValueError):
        EventSequence("a", [1.0], None, [(0.0, 2.0), (1.0, 3.0)]).validate(H_T)


def test_basis_validation():
    with pytest.raises(ValueError):
        BasisSpec("gaussian-kernel", 0, 24.0)
    with pytest.raises(ValueError):
        BasisSpec("other", 3, 24.0)
    with pytest.raises(ValueError):
        BasisSpec.spline(24.0, 3)


def test_basis_round_trip():
    for b in (GAUSS, SPLINE, HAWKES):
        assert BasisSpec.from_dict(b.to_dict()) == b


def test_zero_coefficients_give_zero():
    assert eval_intensity(np.zeros(6), GAUSS, H_T, 7.3) == 0.0


def test_kernel_maximum_is_one():
    B = np.zeros(6)
    B[2] = 1.0
    assert eval_intensity(B, GAUSS, H_T, GAUSS.centers[2]) == pytest.approx(1.0, abs=1e-15)


def test_hawkes_empty_history_is_baseline():
    B = np.r_[np.linspace(0.5, 1.5, 6), np.ones(3)]
    assert eval_intensity(B, HAWKES, H_T, 9.0, []) == pytest.approx(
        eval_intensity(B[:6], GAUSS, H_T, 9.0))


def test_empty_interval_integrates_to_zero():
    assert integrate_intensity(np.ones(6), GAUSS, H_T, 5.0, 5.0) == 0.0


def test_unit_intensity_rectangle():
    # clamped cubic B-splines sum to one, so unit coefficients give lambda = 1
    assert integrate_intensity(np.ones(6), SPLINE, HorizonSpec(24.0, 1), 0.0, 24.0) == \
        pytest.approx(24.0, abs=1e-12)


def test_truncated_gaussian_integral_against_quadrature():
    basis = BasisSpec.gaussian(24.0, 24)  # sigma = 1
    B = np.zeros(24)
    B[11] = 1.0  # center 12
    c, s = 12.0, 1.0
    got = integrate_intensity(B, basis, HorizonSpec(24.0, 1), c - 8 * s, c + 8 * s)
    oracle = quad(lambda u: math.exp(-(u - c) ** 2 / (2 * s * s)), c - 8 * s, c + 8 * s,
                  epsabs=1e-14, epsrel=1e-13)[0]
    assert got == pytest.approx(oracle, abs=1e-10)
    assert got == pytest.approx(math.sqrt(2 * math.pi) * s, abs=1e-8)


def test_compensator_gaps_unit_rate():
    seq = EventSequence("a", [1.0, 2.0, 3.0])
    h = HorizonSpec(5.0, 1)
    gaps = compensator_gaps(np.ones(6), BasisSpec.spline(5.0, 6), h, seq)
    np.testing.assert_allclose(gaps, [1.0, 1.0, 1.0, 2.0], atol=1e-12)


def test_compensator_gaps_empty_sequence():
    gaps = compensator_gaps(np.ones(6), GAUSS, H_T, EventSequence("e", []))
    assert gaps.shape == (1,)
    assert gaps[0] == pytest.approx(integrate_intensity(np.ones(6), GAUSS, H_T, 0.0, 48.0))


def test_compensator_gaps_sum_to_total(rng):
    B = rng.uniform(0.1, 2.0, 9)
    times = np.sort(rng.uniform(0, 48, 40))
    seq = EventSequence("a", times)
    gaps = compensator_gaps(B, HAWKES, H_T, seq)
    total = integrate_intensity(B, HAWKES, H_T, 0.0, 48.0, times)
    assert gaps.sum() == pytest.approx(total, rel=1e-8)


def test_domain_errors():
    with pytest.raises(ValueError):
        eval_intensity(np.ones(6), GAUSS, H_T, 49.0)
    with pytest.raises(ValueError):
        integrate_intensity(np.ones(6), GAUSS, H_T, 5.0, 4.0)
    with pytest.raises(ValueError):
        eval_intensity(np.r_[np.ones(6), np.ones(3)], HAWKES, H_T, 3.0, [4.0])
    with pytest.raises(ValueError):
        eval_intensity(-np.ones(6), GAUSS, H_T, 3.0)


@given(st.floats(0.0, 24.0), st.integers(0, 5))
def test_periodicity(t, seed):
    B = np.random.default_rng(seed).uniform(0, 3, 6)
    # the clamped spline jumps at period boundaries, so rounding of t + T
    # there can land on either side of the jump
    near_edge = min(t, 24.0 - t) < 1e-9
    for basis in (GAUSS,) if near_edge else (GAUSS, SPLINE):
        assert eval_intensity(B, basis, H_T, t) == pytest.approx(
            eval_intensity(B, basis, H_T, t + 24.0), abs=1e-12)


@given(st.lists(st.floats(0.0, 48.0), min_size=3, max_size=3), st.integers(0, 5))
def test_integral_additivity(pts, seed):
    x, y, z = sorted(pts)
    rng = np.random.default_rng(seed)
    hist = np.sort(rng.uniform(0, 48, 20))
    hist = hist[hist < z] if z > 0 else hist[:0]
    B = rng.uniform(0, 2, 9)
    whole = integrate_intensity(B, HAWKES, H_T, x, z, hist)
    parts = (integrate_intensity(B, HAWKES, H_T, x, y, hist[hist <= y])
             + integrate_intensity(B, HAWKES, H_T, y, z, hist))
    assert abs(whole - parts) <= 1e-10 * (1.0 + abs(whole))


@pytest.mark.parametrize("basis", [GAUSS, SPLINE], ids=["gaussian", "spline"])
def test_closed_form_matches_trapezoid(basis, rng):
    # one period: the clamped spline is discontinuous at period boundaries
    for _ in range(10):
        B = rng.uniform(0, 3, 6)
        a, b = np.sort(rng.uniform(0, 24, 2))
        grid = np.linspace(a, b, 10_001)
        oracle = trapezoid(baseline_values(basis, grid) @ B, grid)
        got = integrate_intensity(B, basis, H_T, a, b)
        assert got == pytest.approx(oracle, rel=1e-6, abs=1e-12)


@given(st.floats(0.0, 48.0), st.integers(0, 20))
def test_nonnegative_intensity(t, seed):
    B = np.random.default_rng(seed).uniform(0, 3, 6)
    assert eval_intensity(B, GAUSS, H_T, t) >= 0.0


def test_design_rows_reproduce_scalar_routines(rng):
    B = rng.uniform(0.2, 2.0, 9)
    seqs = [EventSequence(str(i), np.sort(rng.uniform(0, 48, n))) for i, n in
            enumerate((0, 3, 17))]
    d = design_batch(HAWKES, H_T, seqs)
    for n, s in enumerate(seqs):
        rows = d.rows(n)
        np.testing.assert_allclose(d.integ[rows] @ B, compensator_gaps(B, HAWKES, H_T, s),
                                   rtol=1e-12)
        for i, t in enumerate(s.times):
            lam = eval_intensity(B, HAWKES, H_T, t, s.times[:i])
            assert (d.left[rows][i + 1] @ B) == pytest.approx(lam, rel=1e-10)


def test_time_rescaled_gaps_are_unit_exponential():
    rng = np.random.default_rng(11)
    B = np.array([0.5, 1.5, 0.2, 2.0, 0.8, 1.0])
    h = HorizonSpec(24.0, 1)
    bound = float(np.sum(B))
    gaps = []
    while len(gaps) < 5000:
        t = thin_function(lambda u: baseline_values(GAUSS, u) @ B, bound, 0.0, 24.0, rng)
        gaps.extend(compensator_gaps(B, GAUSS, h, EventSequence("x", t))[:-1])
    assert kstest(np.asarray(gaps[:5000]), "expon").pvalue > 0.01
