import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from robust_tpp.intensity import EventSequence, HorizonSpec
from robust_tpp.simulate import (BENCH_TRIGGERS, ContaminationSpec, TrueIntensitySpec,
                                 contaminate, benchmark_design, sample_windows, simulate_hawkes,
                                 simulate_nhpp, substream, thin_function)

H_T = HorizonSpec(24.0, 2)


def test_spec_validation():
    with pytest.raises(ValueError):
        TrueIntensitySpec(0, ((-1.0, 0.0, 1.0),))
    with pytest.raises(ValueError):
        TrueIntensitySpec(0, ((1.0, 0.0, 0.0),))
    with pytest.raises(ValueError):
        TrueIntensitySpec.constant(-1.0)
    with pytest.raises(ValueError):
        ContaminationSpec(1.0)
    with pytest.raises(ValueError):
        ContaminationSpec(0.2, "swap")
    with pytest.raises(ValueError):
        ContaminationSpec.from_type(0.2, "iii")


def test_cumulative_matches_quadrature():
    spec = TrueIntensitySpec.benchmark(0)
    for t in (3.0, 24.0, 37.5):
        oracle = quad(lambda u: float(spec.baseline(u)), 0.0, t, limit=200,
                      points=[24.0] if t > 24.0 else None, epsabs=1e-13)[0]
        assert float(spec.cumulative(t)) == pytest.approx(oracle, rel=1e-9)


def test_trigger_integral_matches_branching_ratio():
    amp, d = BENCH_TRIGGERS[1]
    spec = TrueIntensitySpec.benchmark(1, hawkes=True)
    assert spec.branching_ratio == pytest.approx(amp * math.sqrt(math.pi * d) / 2)


def test_simulation_is_deterministic():
    spec = TrueIntensitySpec.benchmark(2)
    a = simulate_nhpp(spec, H_T, 5)
    b = simulate_nhpp(spec, H_T, 5)
    np.testing.assert_array_equal(a.times, b.times)
    assert a.times.size and np.all(np.diff(a.times) > 0) and a.times[-1] <= 48.0


def test_substreams_are_independent_of_order():
    x = substream(9, 3).uniform(size=4)
    substream(9, 0).uniform(size=100)
    np.testing.assert_array_equal(x, substream(9, 3).uniform(size=4))


def test_constant_rate_mean_count():
    spec = TrueIntensitySpec.constant(1.5)
    counts = [len(simulate_nhpp(spec, H_T, substream(1, i))) for i in range(400)]
    mean, expect = np.mean(counts), 1.5 * 48.0
    assert abs(mean - expect) < 4 * math.sqrt(expect / 400)


def test_nhpp_mean_count_matches_cumulative():
    spec = TrueIntensitySpec.benchmark(3)
    counts = [len(simulate_nhpp(spec, H_T, substream(2, i))) for i in range(300)]
    expect = float(spec.cumulative(48.0))
    assert abs(np.mean(counts) - expect) < 4 * math.sqrt(expect / 300)


def test_thinning_histogram_within_bands():
    spec = TrueIntensitySpec.benchmark(1)
    h = HorizonSpec(24.0, 1)
    events = np.concatenate([simulate_nhpp(spec, h, substream(4, i)).times
                             for i in range(400)])
    edges = np.linspace(0, 24, 13)
    counts, _ = np.histogram(events, edges)
    expect = 400 * np.diff(spec.cumulative(edges))
    assert np.all(np.abs(counts - expect) <= 4 * np.sqrt(expect))


def test_thin_function_rejects_bad_bound():
    with pytest.raises(ValueError):
        thin_function(lambda t: np.full_like(t, 3.0), 1.0, 0.0, 100.0, 0)
    assert thin_function(lambda t: t, 0.0, 0.0, 1.0, 0).size == 0


def test_hawkes_with_zero_trigger_equals_nhpp():
    base = TrueIntensitySpec.benchmark(0)
    spec = TrueIntensitySpec(0, base.bumps, base.period, (0.0, 4.0))
    a = simulate_hawkes(spec, H_T, 11)
    b = simulate_nhpp(base, H_T, 11)
    np.testing.assert_array_equal(a.times, b.times)


def test_hawkes_rejects_unstable_trigger():
    spec = TrueIntensitySpec(0, ((1.0, 0.0, 1.0),), 24.0, (2.0, 4.0))
    assert spec.branching_ratio >= 1
    with pytest.raises(ValueError):
        simulate_hawkes(spec, H_T, 0)


def test_hawkes_mean_exceeds_nhpp_mean():
    k = 3
    hawkes = [len(simulate_hawkes(TrueIntensitySpec.benchmark(k, True), H_T, substream(5, i)))
              for i in range(150)]
    nhpp = [len(simulate_nhpp(TrueIntensitySpec.benchmark(k), H_T, substream(6, i)))
            for i in range(150)]
    assert np.mean(hawkes) > np.mean(nhpp)


@given(st.floats(0.01, 0.6), st.integers(0, 10_000))
def test_window_layout(eta, seed):
    T0 = 48.0
    w = sample_windows(eta, T0, np.random.default_rng(seed))
    total = sum(b - a for a, b in w)
    assert 0.5 * eta * T0 - 1e-9 <= total <= eta * T0 + 1e-9
    assert all(0.0 <= a < b <= T0 for a, b in w)
    assert all(w[i][1] <= w[i + 1][0] for i in range(len(w) - 1))


@given(st.integers(0, 10_000))
def test_omission_only_removes_window_events(seed):
    clean = simulate_nhpp(TrueIntensitySpec.benchmark(0), H_T, seed)
    out = contaminate(clean, ContaminationSpec(0.3, "omission"), H_T, seed + 1)
    assert set(out.times) <= set(clean.times)
    for t in out.times:
        assert not any(a <= t <= b for a, b in out.contamination_windows)
    for t in set(clean.times) - set(out.times):
        assert any(a <= t <= b for a, b in out.contamination_windows)


@given(st.integers(0, 10_000))
def test_commission_only_adds_window_events(seed):
    clean = simulate_nhpp(TrueIntensitySpec.benchmark(2), H_T, seed)
    out = contaminate(clean, ContaminationSpec(0.3, "commission"), H_T, seed + 1)
    assert set(clean.times) <= set(out.times)
    for t in set(out.times) - set(clean.times):
        assert any(a <= t <= b for a, b in out.contamination_windows)


def test_zero_eta_leaves_sequence_unchanged():
    clean = simulate_nhpp(TrueIntensitySpec.benchmark(1), H_T, 3)
    for kind in ("omission", "commission"):
        out = contaminate(clean, ContaminationSpec(0.0, kind), H_T, 4)
        np.testing.assert_array_equal(out.times, clean.times)
        assert out.contamination_windows == []


def test_full_window_omission_empties_sequence():
    clean = simulate_nhpp(TrueIntensitySpec.benchmark(1), H_T, 3)
    out = contaminate(clean, ContaminationSpec(0.5, "omission"), H_T, 0, windows=[(0.0, 48.0)])
    assert len(out) == 0
    assert out.contamination_windows == [(0.0, 48.0)]


def test_commission_inserted_count_mean():
    # expected insertions per unit window length: center rate * mean amplitude
    spec = ContaminationSpec(0.5, "commission")
    empty = EventSequence("e", [])
    win = [(5.0, 35.0)]
    n = [len(contaminate(empty, spec, H_T, substream(8, i), windows=win)) for i in range(400)]
    expect = spec.center_rate * np.mean(spec.bump_amplitude) * 30.0
    # compound counts are overdispersed; edge bumps lose a little mass
    tol = 4 * math.sqrt(3 * expect / 400)
    assert 0.97 * expect - tol < np.mean(n) < expect + tol


def test_benchmark_design_bookkeeping():
    ds = benchmark_design("nhpp", L=1, eta=0.2, type_="ii", n_per_class=5, seed=1)
    assert len(ds.sequences) == 20
    assert list(np.bincount(ds.labels)) == [5, 5, 5, 5]
    assert len({s.id for s in ds.sequences}) == 20
    assert ds.design["contamination"]["kind"] == "commission"
    assert all(s.contamination_windows for s in ds.sequences)
    again = benchmark_design("nhpp", L=1, eta=0.2, type_="ii", n_per_class=5, seed=1)
    for a, b in zip(ds.sequences, again.sequences):
        np.testing.assert_array_equal(a.times, b.times)
    with pytest.raises(ValueError):
        benchmark_design("poisson")
    with pytest.raises(ValueError):
        benchmark_design(K_true=5)


def test_benchmark_design_clean_has_no_windows():
    ds = benchmark_design("hawkes", L=1, eta=0.0, n_per_class=2, seed=0)
    assert all(s.contamination_windows == [] for s in ds.sequences)
