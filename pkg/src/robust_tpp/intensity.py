"""Event sequences and basis-expansion working intensities.

Two working models are supported:

* non-homogeneous Poisson: ``lambda(t) = sum_h b_h kappa_h(t mod T)``
* self-exciting: the same baseline plus
  ``sum_{t_j < t} sum_h' alpha_h' g_h'(t - t_j)``

Both are linear in the coefficient vector, so every quantity the fitting
loop needs (intensity at interval starts, interval integrals) is a fixed
design matrix times the coefficients. :func:`design_batch` builds those
matrices once per dataset.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.special import erf

from . import _kernels

TAU_FLOOR = 1e-8
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class HorizonSpec:
    """Period length ``T`` and number of periods ``L``; horizon ``T0 = L*T``."""

    T: float
    L: int = 1

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"period length must be positive, got {self.T}")
        if int(self.L) != self.L or self.L < 1:
            raise ValueError(f"L must be a positive integer, got {self.L}")
        object.__setattr__(self, "L", int(self.L))

    @property
    def T0(self):
        return self.L * self.T


@dataclass
class EventSequence:
    """Sorted event times on ``[0, T0]`` with optional ground truth."""

    id: str
    times: np.ndarray
    true_label: int | None = None
    contamination_windows: list = field(default_factory=list)

    def __post_init__(self):
        self.id = str(self.id)
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        if self.times.size and np.any(np.diff(self.times) <= 0):
            raise ValueError(f"sequence {self.id}: times must be strictly increasing")
        if self.times.size and self.times[0] < 0:
            raise ValueError(f"sequence {self.id}: negative timestamp")
        self.contamination_windows = [(float(s), float(e)) for s, e in self.contamination_windows]
        wins = sorted(self.contamination_windows)
        for s, e in wins:
            if not (0 <= s <= e):
                raise ValueError(f"sequence {self.id}: bad window ({s}, {e})")
        for (s0, e0), (s1, e1) in zip(wins, wins[1:]):
            if s1 < e0:
                raise ValueError(f"sequence {self.id}: overlapping windows")

    def __len__(self):
        return self.times.size

    def validate(self, horizon):
        T0 = horizon.T0
        if self.times.size and self.times[-1] > T0:
            raise ValueError(f"sequence {self.id}: event after horizon {T0}")
        for s, e in self.contamination_windows:
            if e > T0 + 1e-12:
                raise ValueError(f"sequence {self.id}: window beyond horizon")

    @property
    def contaminated_length(self):
        return float(sum(e - s for s, e in self.contamination_windows))


@dataclass(frozen=True)
class BasisSpec:
    """Baseline and (optional) excitation basis.

    ``kind`` is ``"gaussian-kernel"`` (default) or ``"cubic-spline"``. For
    Gaussian kernels ``centers`` default to ``h*T/H`` and ``bandwidth`` to
    ``T/H``; kernels use the nearest periodic image so the baseline has
    period ``T``. Excitation bases exist iff ``trigger_H`` is set.
    """

    kind: str
    H: int
    period: float
    centers: tuple = ()
    bandwidth: float = 0.0
    trigger_H: int | None = None
    trigger_bandwidth: float | None = None
    trigger_span: float | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian-kernel", "cubic-spline"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.H < 1:
            raise ValueError("H must be >= 1")
        if self.kind == "cubic-spline" and self.H < 4:
            raise ValueError("cubic-spline basis needs H >= 4")
        if self.kind == "gaussian-kernel":
            if not self.centers:
                step = self.period / self.H
                object.__setattr__(self, "centers", tuple(step * h for h in range(1, self.H + 1)))
            if self.bandwidth <= 0:
                object.__setattr__(self, "bandwidth", self.period / self.H)
            if len(self.centers) != self.H:
                raise ValueError("need one center per basis function")
            if any(c < 0 or c > self.period for c in self.centers):
                raise ValueError("centers must lie in [0, T]")
        if self.trigger_H is not None:
            if self.trigger_H < 1:
                raise ValueError("trigger_H must be >= 1")
            span = self.trigger_span if self.trigger_span else self.period
            object.__setattr__(self, "trigger_span", float(span))
            if not self.trigger_bandwidth:
                object.__setattr__(self, "trigger_bandwidth", span / self.trigger_H)
            if self.trigger_bandwidth <= 0:
                raise ValueError("trigger bandwidth must be positive")

    @classmethod
    def gaussian(cls, T, H=6, trigger_H=None, trigger_span=None):
        return cls("gaussian-kernel", H, float(T), trigger_H=trigger_H, trigger_span=trigger_span)

    @classmethod
    def spline(cls, T, H=6, trigger_H=None, trigger_span=None):
        return cls("cubic-spline", H, float(T), trigger_H=trigger_H, trigger_span=trigger_span)

    @property
    def self_exciting(self):
        return self.trigger_H is not None

    @property
    def n_params(self):
        return self.H + (self.trigger_H or 0)

    @property
    def trigger_centers(self):
        step = self.trigger_span / self.trigger_H
        return np.arange(1, self.trigger_H + 1) * step

    @property
    def trigger_truncation(self):
        return self.trigger_span + 5.0 * self.trigger_bandwidth

    def to_dict(self):
        return {
            "kind": self.kind, "H": self.H, "period": self.period,
            "centers": list(self.centers), "bandwidth": self.bandwidth,
            "trigger_H": self.trigger_H, "trigger_bandwidth": self.trigger_bandwidth,
            "trigger_span": self.trigger_span,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], int(d["H"]), float(d["period"]), tuple(d.get("centers") or ()),
                   float(d.get("bandwidth") or 0.0), d.get("trigger_H"),
                   d.get("trigger_bandwidth"), d.get("trigger_span"))


# ---------------------------------------------------------------------------
# baseline basis: values and cumulative integrals
# ---------------------------------------------------------------------------

def _spline_basis(basis):
    H, T = basis.H, basis.period
    interior = np.linspace(0.0, T, H - 2)[1:-1]
    knots = np.concatenate(([0.0] * 4, interior, [T] * 4))
    spl = BSpline(knots, np.eye(H), 3, extrapolate=False)
    return spl, spl.antiderivative()


_SPLINE_CACHE = {}


def _spline_pair(basis):
    key = (basis.H, basis.period)
    if key not in _SPLINE_CACHE:
        _SPLINE_CACHE[key] = _spline_basis(basis)
    return _SPLINE_CACHE[key]


def _gauss_images(basis):
    c = np.asarray(basis.centers, dtype=np.float64)
    T = basis.period
    return np.stack([c - T, c, c + T])  # (3, H)


def baseline_values(basis, t):
    """Baseline basis functions at times ``t``; shape ``(len(t), H)``."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    T = basis.period
    tau = np.mod(t, T)
    if basis.kind == "gaussian-kernel":
        c = np.asarray(basis.centers)[None, :]
        d = np.mod(tau[:, None] - c + 0.5 * T, T) - 0.5 * T
        return np.exp(-0.5 * (d / basis.bandwidth) ** 2)
    spl, _ = _spline_pair(basis)
    return np.nan_to_num(spl(tau))


def _period_cumulative(basis, tau):
    # integral of each basis function over [0, tau], tau in [0, T]
    T = basis.period
    if basis.kind == "gaussian-kernel":
        sig = basis.bandwidth
        scale = math.sqrt(math.pi / 2.0) * sig
        imgs = _gauss_images(basis)  # (3, H)
        lo = np.maximum(0.0, imgs - 0.5 * T)  # (3, H)
        hi_cap = imgs + 0.5 * T
        hi = np.minimum(tau[:, None, None], hi_cap[None])  # (n, 3, H)
        lo_b = np.broadcast_to(lo[None], hi.shape)
        val = scale * (erf((hi - imgs[None]) / (_SQRT2 * sig)) - erf((lo_b - imgs[None]) / (_SQRT2 * sig)))
        return np.where(hi > lo_b, val, 0.0).sum(axis=1)
    _, anti = _spline_pair(basis)
    return np.nan_to_num(anti(np.clip(tau, 0.0, T))) - np.nan_to_num(anti(np.zeros(1)))


def period_integrals(basis):
    """Integral of each baseline function over one full period."""
    return _period_cumulative(basis, np.array([basis.period]))[0]


def baseline_cumulative(basis, t):
    """``int_0^t kappa_h(u) du`` for each ``t``; shape ``(len(t), H)``."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    T = basis.period
    k = np.floor(t / T)
    tau = t - k * T
    # guard floating residue at exact multiples of T
    wrap = tau >= T
    k = np.where(wrap, k + 1, k)
    tau = np.where(wrap, 0.0, tau)
    return k[:, None] * period_integrals(basis)[None, :] + _period_cumulative(basis, tau)


# ---------------------------------------------------------------------------
# excitation basis
# ---------------------------------------------------------------------------

def trigger_values(basis, lags):
    lags = np.asarray(lags, dtype=np.float64).reshape(-1)
    c = basis.trigger_centers[None, :]
    sig = basis.trigger_bandwidth
    dens = np.exp(-0.5 * ((lags[:, None] - c) / sig) ** 2) / (_SQRT2PI * sig)
    ok = (lags > 0) & (lags <= basis.trigger_truncation)
    return np.where(ok[:, None], dens, 0.0)


def trigger_cumulative(basis, lags):
    """``int_0^lag g_h'(u) du`` with the kernel truncated at its support."""
    lags = np.clip(np.asarray(lags, dtype=np.float64).reshape(-1), 0.0, basis.trigger_truncation)
    c = basis.trigger_centers[None, :]
    s = _SQRT2 * basis.trigger_bandwidth
    return 0.5 * (erf((lags[:, None] - c) / s) - erf(-c / s))


# ---------------------------------------------------------------------------
# single-point API
# ---------------------------------------------------------------------------

def _check_params(params, basis):
    B = np.asarray(params, dtype=np.float64).reshape(-1)
    if B.size != basis.n_params:
        raise ValueError(f"expected {basis.n_params} coefficients, got {B.size}")
    if not np.all(np.isfinite(B)) or np.any(B < 0):
        raise ValueError("coefficients must be finite and nonnegative")
    return B


def _check_time(t, horizon):
    if not (0.0 <= t <= horizon.T0):
        raise ValueError(f"time {t} outside [0, {horizon.T0}]")


def _check_history(history, before):
    h = np.asarray(history if history is not None else [], dtype=np.float64).reshape(-1)
    if h.size and (np.any(np.diff(h) <= 0) or h[-1] > before):
        raise ValueError("history must be sorted and not after the evaluation time")
    return h


def eval_intensity(params, basis, horizon, t, history=None):
    """Working intensity at time ``t`` given the events before ``t``."""
    B = _check_params(params, basis)
    _check_time(t, horizon)
    hist = _check_history(history, t)
    lam = float(baseline_values(basis, [t])[0] @ B[:basis.H])
    if basis.self_exciting and hist.size:
        hist = hist[hist < t]
        lam += float(trigger_values(basis, t - hist).sum(axis=0) @ B[basis.H:])
    return lam


def integrate_intensity(params, basis, horizon, t_start, t_end, history=None):
    """``int_{t_start}^{t_end} lambda(u) du`` in closed form."""
    B = _check_params(params, basis)
    if not (0.0 <= t_start <= t_end <= horizon.T0):
        raise ValueError(f"need 0 <= t_start <= t_end <= T0, got [{t_start}, {t_end}]")
    hist = _check_history(history, t_end)
    cum = baseline_cumulative(basis, [t_start, t_end])
    val = float((cum[1] - cum[0]) @ B[:basis.H])
    if basis.self_exciting and hist.size:
        hist = hist[hist < t_end]
        lo = np.maximum(t_start - hist, 0.0)
        hi = t_end - hist
        inc = trigger_cumulative(basis, hi) - trigger_cumulative(basis, lo)
        val += float(inc.sum(axis=0) @ B[basis.H:])
    return max(val, 0.0)


# ---------------------------------------------------------------------------
# design matrices
# ---------------------------------------------------------------------------

@dataclass
class DesignBatch:
    """Interval-level design matrices for a list of sequences.

    Row ``r`` is interval ``(start[r], end[r]]`` of sequence ``seq[r]``;
    each sequence with ``M`` events owns ``M + 1`` consecutive rows, the
    first starting at 0 and the last ending at ``T0``.

    ``left @ B`` is the intensity at each interval start (the first row of a
    sequence is all zeros; its log term is fixed to 0). ``integ @ B`` is the
    interval compensator.
    """

    left: np.ndarray
    integ: np.ndarray
    seq: np.ndarray
    offsets: np.ndarray
    start: np.ndarray
    end: np.ndarray

    @property
    def n_sequences(self):
        return self.offsets.size - 1

    @property
    def first(self):
        m = np.zeros(self.seq.size, dtype=bool)
        m[self.offsets[:-1]] = True
        return m

    @property
    def terminal(self):
        m = np.zeros(self.seq.size, dtype=bool)
        m[self.offsets[1:] - 1] = True
        return m

    @property
    def lengths(self):
        return self.end - self.start

    def rows(self, n):
        return slice(self.offsets[n], self.offsets[n + 1])

    def seq_sum(self, values):
        """Sum per-row ``values`` (rows first) within each sequence."""
        return np.add.reduceat(values, self.offsets[:-1], axis=0)


def sequence_design(basis, horizon, times):
    times = np.asarray(times, dtype=np.float64)
    starts = np.concatenate(([0.0], times))
    ends = np.concatenate((times, [horizon.T0]))
    left = baseline_values(basis, starts)
    left[0] = 0.0
    cum = baseline_cumulative(basis, np.concatenate(([0.0], times, [horizon.T0])))
    integ = np.diff(cum, axis=0)
    if basis.self_exciting:
        exc_left, exc_int = _kernels.hawkes_features(
            times, horizon.T0, basis.trigger_centers, basis.trigger_bandwidth,
            basis.trigger_truncation)
        left = np.hstack([left, exc_left])
        integ = np.hstack([integ, exc_int])
    np.maximum(integ, 0.0, out=integ)
    return left, integ, starts, ends


def design_batch(basis, horizon, sequences):
    lefts, integs, seqs, starts, ends = [], [], [], [], []
    offsets = [0]
    for n, s in enumerate(sequences):
        s.validate(horizon)
        left, integ, st, en = sequence_design(basis, horizon, s.times)
        lefts.append(left)
        integs.append(integ)
        seqs.append(np.full(st.size, n))
        starts.append(st)
        ends.append(en)
        offsets.append(offsets[-1] + st.size)
    return DesignBatch(np.vstack(lefts), np.vstack(integs), np.concatenate(seqs),
                       np.asarray(offsets), np.concatenate(starts), np.concatenate(ends))


def compensator_gaps(params, basis, horizon, sequence):
    """Compensator increments over the ``M + 1`` intervals of ``sequence``."""
    B = _check_params(params, basis)
    sequence.validate(horizon)
    _, integ, _, _ = sequence_design(basis, horizon, sequence.times)
    return np.maximum(integ @ B, 0.0)


def left_log_intensity(left, B, first):
    """``log max(lambda, tau_floor)`` at interval starts, 0 on first rows."""
    lam = left @ B
    out = np.log(np.maximum(lam, TAU_FLOOR))
    out[first] = 0.0
    return out, lam
