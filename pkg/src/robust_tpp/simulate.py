"""Synthetic event sequences and the contamination mechanism.

Clean sequences come from periodic sums of Gaussian bumps (optionally with
half-Gaussian self-excitation) and are drawn by thinning. Contamination
picks random windows per sequence and either deletes every event inside
them (omission) or inserts bursts from a random bump train (commission).
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .intensity import EventSequence, HorizonSpec

BENCH_T = 24.0

# (amplitude, center, d) for amp * exp(-(t - c)**2 / d)
BENCH_BASELINES = (
    ((3.0, 0.0, 20.0), (2.0, 8.0, 20.0), (1.0, 20.0, 20.0), (3.0, 25.0, 3.0)),
    ((2.0, 6.0, 10.0), (5.0, 20.0, 10.0), (1.0, 0.0, 1.0)),
    ((5.0, 5.0, 3.0), (3.0, 12.0, 2.0), (5.0, 18.0, 3.0)),
    ((5.0, 21.0, 20.0), (2.0, 12.0, 10.0), (3.0, 0.0, 2.0)),
)
# (amplitude, d) for amp * exp(-t**2 / d), t > 0
BENCH_TRIGGERS = (
    (0.05 / math.sqrt(math.pi), 4.0),
    (0.1 / (1.5 * math.sqrt(math.pi)), 9.0),
    (0.15 / math.sqrt(math.pi), 4.0),
    (0.15 / (1.5 * math.sqrt(math.pi)), 9.0),
)

BUMP_SIGMA = 0.05
BUMP_AMPLITUDE = (2.5, 5.0)
BUMP_CENTER_RATE = 5.0 / 12.0
MEAN_EXTRA_WINDOWS = 2.0


@dataclass(frozen=True)
class TrueIntensitySpec:
    """Periodic Gaussian-bump baseline with optional half-Gaussian trigger.

    ``bumps`` holds ``(amplitude, center, d)`` triples for terms
    ``amplitude * exp(-(tau - center)**2 / d)`` evaluated at ``tau = t mod
    period``, plus a constant ``level``. ``trigger`` is ``(amplitude, d)``
    for ``amplitude * exp(-u**2 / d)`` at lag ``u > 0``, or None.
    """

    k: int
    bumps: tuple
    period: float = BENCH_T
    trigger: tuple | None = None
    level: float = 0.0

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("constant level must be >= 0")
        for amp, _, d in self.bumps:
            if amp < 0 or d <= 0:
                raise ValueError("bump amplitudes must be >= 0 and widths > 0")
        if self.trigger is not None and (self.trigger[0] < 0 or self.trigger[1] <= 0):
            raise ValueError("bad trigger specification")

    @classmethod
    def benchmark(cls, k, hawkes=False):
        """Class ``k`` (0-based) of the four-class benchmark design."""
        return cls(k, BENCH_BASELINES[k], BENCH_T, BENCH_TRIGGERS[k] if hawkes else None)

    @classmethod
    def constant(cls, rate, period=BENCH_T, k=0):
        """Homogeneous baseline ``rate``."""
        return cls(k, (), period, None, float(rate))

    def scaled(self, factor):
        """Baseline multiplied by ``factor``; the trigger is unchanged."""
        if factor < 0:
            raise ValueError("scale factor must be >= 0")
        bumps = tuple((amp * factor, c, d) for amp, c, d in self.bumps)
        return TrueIntensitySpec(self.k, bumps, self.period, self.trigger, self.level * factor)

    @property
    def envelope(self):
        """Upper bound of the baseline: the sum of the amplitudes."""
        return float(sum(b[0] for b in self.bumps)) + self.level

    @property
    def branching_ratio(self):
        if self.trigger is None:
            return 0.0
        amp, d = self.trigger
        return amp * math.sqrt(math.pi * d) / 2.0

    def baseline(self, t):
        tau = np.mod(np.asarray(t, dtype=np.float64), self.period)
        out = np.full_like(tau, self.level)
        for amp, c, d in self.bumps:
            out = out + amp * np.exp(-(tau - c) ** 2 / d)
        return out

    def _period_cum(self, tau):
        out = self.level * tau
        for amp, c, d in self.bumps:
            s = math.sqrt(d)
            out = out + amp * math.sqrt(math.pi) * s / 2.0 * (erf((tau - c) / s) - erf(-c / s))
        return out

    def cumulative(self, t):
        """``int_0^t`` of the baseline."""
        t = np.asarray(t, dtype=np.float64)
        n = np.floor(t / self.period)
        tau = t - n * self.period
        full = float(self._period_cum(np.array(self.period)))
        return n * full + self._period_cum(tau)

    def trigger_value(self, lag):
        lag = np.asarray(lag, dtype=np.float64)
        if self.trigger is None:
            return np.zeros_like(lag)
        amp, d = self.trigger
        return np.where(lag > 0, amp * np.exp(-lag ** 2 / d), 0.0)

    def trigger_cumulative(self, lag):
        lag = np.maximum(np.asarray(lag, dtype=np.float64), 0.0)
        if self.trigger is None:
            return np.zeros_like(lag)
        amp, d = self.trigger
        return amp * math.sqrt(math.pi * d) / 2.0 * erf(lag / math.sqrt(d))

    def intensity(self, t, history=()):
        hist = np.asarray(history, dtype=np.float64)
        val = float(self.baseline(t))
        if self.trigger is not None and hist.size:
            val += float(self.trigger_value(t - hist[hist < t]).sum())
        return val

    def compensator_gaps(self, times, t_end=None):
        """Compensator increments between consecutive events, starting at 0.

        With ``t_end`` a final increment up to ``t_end`` is appended.
        """
        times = np.asarray(times, dtype=np.float64)
        pts = np.concatenate(([0.0], times) + (([t_end],) if t_end is not None else ()))
        gaps = np.diff(self.cumulative(pts))
        if self.trigger is not None and times.size:
            cum = np.zeros(pts.size)
            for j, tj in enumerate(times):
                cum += self.trigger_cumulative(pts - tj)
            gaps = gaps + np.diff(cum)
        return gaps


def _excitation_bound(spec, t, events):
    # half-Gaussian triggers are largest at lag 0, so the value at t bounds
    # the excitation at every later time until the next event
    if not events:
        return 0.0
    amp, d = spec.trigger
    lags = t - np.asarray(events[-_HISTORY_CAP:])
    return float(np.sum(amp * np.exp(-lags ** 2 / d)))


_HISTORY_CAP = 10_000


def _thin(spec, T0, rng, max_events=1_000_000):
    lam_bar = spec.envelope
    events = []
    t = 0.0
    excite = spec.trigger is not None
    while True:
        bound = lam_bar + (_excitation_bound(spec, t, events) if excite else 0.0)
        if bound <= 0.0:
            break
        t += rng.exponential(1.0 / bound)
        if t > T0:
            break
        lam = spec.intensity(t, events) if excite else float(spec.baseline(t))
        if rng.uniform() * bound <= lam:
            events.append(t)
            if len(events) > max_events:
                raise RuntimeError("event cap exceeded; intensity is too large")
    return np.asarray(events)


def thin_function(rate, bound, t_start, t_end, rng):
    """Poisson process on ``[t_start, t_end]`` with vectorised ``rate``
    bounded by the constant ``bound``."""
    rng = _rng(rng)
    if bound <= 0.0 or t_end <= t_start:
        return np.empty(0)
    n = rng.poisson(bound * (t_end - t_start))
    cand = np.sort(rng.uniform(t_start, t_end, n))
    lam = np.asarray(rate(cand), dtype=np.float64)
    if np.any(lam > bound * (1.0 + 1e-12)):
        raise ValueError("rate exceeds the thinning bound")
    return cand[rng.uniform(size=n) * bound <= lam]


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def simulate_nhpp(spec, horizon, seed, seq_id="0", label=None):
    """Thinning against the constant envelope ``sum of amplitudes``."""
    if spec.envelope < 0:
        raise ValueError("negative envelope")
    base = TrueIntensitySpec(spec.k, spec.bumps, spec.period, None, spec.level)
    return EventSequence(seq_id, _thin(base, horizon.T0, _rng(seed)), label)


def simulate_hawkes(spec, horizon, seed, seq_id="0", label=None):
    """Ogata thinning; the envelope is refreshed after every candidate."""
    if spec.branching_ratio >= 1.0:
        raise ValueError(f"unstable trigger: integral {spec.branching_ratio:.3f} >= 1")
    return EventSequence(seq_id, _thin(spec, horizon.T0, _rng(seed)), label)


# ---------------------------------------------------------------------------
# contamination
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContaminationSpec:
    """Window layout and outlier mechanism.

    ``kind`` is ``"omission"`` (Type-i) or ``"commission"`` (Type-ii). The
    total contaminated length is drawn from ``Uniform[0.5*eta, eta] * T0``.
    """

    eta: float
    kind: str = "omission"
    bump_sigma: float = BUMP_SIGMA
    bump_amplitude: tuple = BUMP_AMPLITUDE
    center_rate: float = BUMP_CENTER_RATE
    mean_extra_windows: float = MEAN_EXTRA_WINDOWS

    def __post_init__(self):
        if not (0.0 <= self.eta < 1.0):
            raise ValueError("eta must lie in [0, 1)")
        if self.kind not in ("omission", "commission"):
            raise ValueError(f"unknown contamination kind {self.kind!r}")

    @classmethod
    def from_type(cls, eta, type_):
        kinds = {"i": "omission", "ii": "commission", "omission": "omission",
                 "commission": "commission"}
        if str(type_).lower() not in kinds:
            raise ValueError(f"type must be 'i' or 'ii', got {type_!r}")
        return cls(float(eta), kinds[str(type_).lower()])

    def to_dict(self):
        return {"eta": self.eta, "kind": self.kind, "bump_sigma": self.bump_sigma,
                "bump_amplitude": list(self.bump_amplitude), "center_rate": self.center_rate,
                "mean_extra_windows": self.mean_extra_windows}


def sample_windows(eta, T0, rng, mean_extra=MEAN_EXTRA_WINDOWS, max_tries=1000):
    """Disjoint windows with total length ``U[0.5 eta, eta] * T0``."""
    if eta <= 0:
        return []
    total = rng.uniform(0.5 * eta, eta) * T0
    count = 1 + rng.poisson(mean_extra)
    lengths = rng.dirichlet(np.ones(count)) * total
    for _ in range(max_tries):
        placed = []
        for ln in lengths:
            for _ in range(max_tries):
                s = rng.uniform(0.0, T0 - ln)
                if all(s + ln <= a or s >= b for a, b in placed):
                    placed.append((s, s + ln))
                    break
            else:
                break
        if len(placed) == count:
            return sorted(placed)
    raise RuntimeError("could not place disjoint contamination windows")


def bump_train_events(window, spec, rng):
    """Events of a random bump train restricted to ``window``.

    Centers form a homogeneous Poisson process of rate ``center_rate`` on
    the window; each bump is a unit-mass Gaussian of width ``bump_sigma``
    scaled by ``U ~ Uniform(bump_amplitude)``.
    """
    s, e = window
    n_centers = rng.poisson(spec.center_rate * (e - s))
    centers = rng.uniform(s, e, size=n_centers)
    out = []
    for c in np.sort(centers):
        amp = rng.uniform(*spec.bump_amplitude)
        z_lo = (s - c) / spec.bump_sigma
        z_hi = (e - c) / spec.bump_sigma
        mass = 0.5 * (erf(z_hi / math.sqrt(2.0)) - erf(z_lo / math.sqrt(2.0)))
        k = rng.poisson(amp * mass)
        drawn = 0
        while drawn < k:
            x = rng.normal(c, spec.bump_sigma)
            if s <= x <= e:
                out.append(x)
                drawn += 1
    return np.asarray(out)


def contaminate(sequence, spec, horizon, seed, windows=None):
    """Apply ``spec`` to ``sequence``; windows are recorded on the result.

    ``windows`` overrides the sampled layout when given.
    """
    rng = _rng(seed)
    T0 = horizon.T0
    if windows is None:
        windows = sample_windows(spec.eta, T0, rng, spec.mean_extra_windows)
    windows = sorted((float(a), float(b)) for a, b in windows)
    times = sequence.times
    if spec.kind == "omission":
        keep = np.ones(times.size, dtype=bool)
        for s, e in windows:
            keep &= ~((times >= s) & (times <= e))
        new = times[keep]
    else:
        extra = [bump_train_events(w, spec, rng) for w in windows]
        new = np.unique(np.concatenate([times] + extra)) if extra else times
        new = new[(new >= 0) & (new <= T0)]
    return EventSequence(sequence.id, new, sequence.true_label, windows)


# ---------------------------------------------------------------------------
# benchmark design
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    sequences: list
    horizon: HorizonSpec
    design: dict = field(default_factory=dict)

    @property
    def labels(self):
        return np.array([s.true_label for s in self.sequences])


def substream(seed, i):
    """Generator for sequence ``i``; a pure function of ``(seed, i)``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))


def benchmark_design(design="nhpp", L=2, eta=0.2, type_="i", K_true=4, n_per_class=30, seed=0):
    """Four-class benchmark with ``n_per_class`` sequences per class."""
    if design not in ("nhpp", "hawkes"):
        raise ValueError(f"design must be 'nhpp' or 'hawkes', got {design!r}")
    if not (1 <= K_true <= len(BENCH_BASELINES)):
        raise ValueError(f"K_true must be between 1 and {len(BENCH_BASELINES)}")
    horizon = HorizonSpec(BENCH_T, int(L))
    cspec = ContaminationSpec.from_type(eta, type_)
    seqs = []
    i = 0
    for k in range(K_true):
        spec = TrueIntensitySpec.benchmark(k, hawkes=(design == "hawkes"))
        for _ in range(n_per_class):
            rng = substream(seed, i)
            sid = f"s{i:04d}"
            if design == "nhpp":
                clean = simulate_nhpp(spec, horizon, rng, sid, k)
            else:
                clean = simulate_hawkes(spec, horizon, rng, sid, k)
            seqs.append(contaminate(clean, cspec, horizon, rng) if eta > 0 else clean)
            i += 1
    meta = {
        "design": design, "L": int(L), "T": BENCH_T, "eta": float(eta), "type": str(type_),
        "K_true": K_true, "n_per_class": n_per_class, "seed": seed,
        "contamination": cspec.to_dict(),
        "window_sampling": "count 1+Poisson(mean_extra_windows); total U[0.5eta,eta]*T0; "
                           "Dirichlet split; uniform starts with overlap rejection",
        "substreams": "numpy SeedSequence(seed, spawn_key=(i,)) per sequence",
    }
    return Dataset(seqs, horizon, meta)
