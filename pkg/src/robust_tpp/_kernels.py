"""Hot numeric kernels with a numba path and a pure-numpy path.

The numba versions are used when numba imports cleanly and the environment
variable ``ROBUST_TPP_DISABLE_NUMBA`` is unset (or ``0``). Both paths compute
the same quantities; ``tests/test_kernels.py`` checks that they agree and
``benchmarks/bench_kernels.py`` times them against each other.
"""
import math
import os

import numpy as np

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)

# Bisection bracket for the level-set reflection. A double x > -1 has
# x + 1 >= 2**-53, whose reflected root is well below 50.
REFLECT_UPPER = 50.0
REFLECT_TOL = 1e-12
REFLECT_MAX_ITER = 200
LEVEL_CUTOFF = 1e-300


def _numba_requested():
    flag = os.environ.get("ROBUST_TPP_DISABLE_NUMBA", "").strip().lower()
    return flag in ("", "0", "false", "no")


try:
    if not _numba_requested():
        raise ImportError("numba disabled by ROBUST_TPP_DISABLE_NUMBA")
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# reflection x -> x' on the level set (1+u) exp(-u-1)
# ---------------------------------------------------------------------------

def _reflect_scalar(x):
    # solve log1p(u) - u = log1p(x) - x for u >= 0
    if x >= 0.0:
        return 0.0
    level = (x + 1.0) * math.exp(-x - 1.0)
    if level < LEVEL_CUTOFF:
        return math.inf
    target = math.log1p(x) - x
    u = -x
    converged = False
    for _ in range(REFLECT_MAX_ITER):
        f = math.log1p(u) - u - target
        d = -u / (1.0 + u)
        if d == 0.0:
            break
        step = f / d
        u_new = u - step
        if not (u_new > 0.0) or u_new > REFLECT_UPPER:
            break
        u = u_new
        if abs(step) <= REFLECT_TOL * max(1.0, u):
            converged = True
            break
    if not converged:
        lo, hi = 0.0, REFLECT_UPPER
        for _ in range(REFLECT_MAX_ITER):
            mid = 0.5 * (lo + hi)
            if math.log1p(mid) - mid - target > 0.0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= REFLECT_TOL:
                break
        u = 0.5 * (lo + hi)
    return u


def _reflect_loop(x):
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        out[i] = _reflect_scalar(x[i])
    return out


def reflect_numpy(x):
    """Vectorised Newton iteration with a bisection clean-up pass."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    neg = x < 0.0
    if not neg.any():
        return out
    xn = x[neg]
    level = (xn + 1.0) * np.exp(-xn - 1.0)
    res = np.full_like(xn, np.inf)
    live = level >= LEVEL_CUTOFF
    target = np.log1p(xn[live]) - xn[live]
    u = -xn[live]
    done = np.zeros(u.shape, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        for _ in range(REFLECT_MAX_ITER):
            f = np.log1p(u) - u - target
            d = -u / (1.0 + u)
            step = np.where(done, 0.0, f / d)
            u_new = u - step
            bad = ~np.isfinite(u_new) | (u_new <= 0.0) | (u_new > REFLECT_UPPER)
            step = np.where(bad, 0.0, step)
            u = np.where(bad, u, u_new)
            done |= bad | (np.abs(step) <= REFLECT_TOL * np.maximum(1.0, u))
            if done.all():
                break
    resid = np.abs(np.log1p(u) - u - target)
    redo = ~(resid <= 1e-13 * np.maximum(1.0, np.abs(target)))
    if redo.any():
        lo = np.zeros(redo.sum())
        hi = np.full(redo.sum(), REFLECT_UPPER)
        tgt = target[redo]
        for _ in range(REFLECT_MAX_ITER):
            mid = 0.5 * (lo + hi)
            above = np.log1p(mid) - mid - tgt > 0.0
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
            if np.all(hi - lo <= REFLECT_TOL):
                break
        u[redo] = 0.5 * (lo + hi)
    res[live] = u
    out[neg] = res
    return out


# ---------------------------------------------------------------------------
# self-exciting design features
# ---------------------------------------------------------------------------

def _gauss_cdf_part(x, c, sigma):
    return 0.5 * math.erf((x - c) / (_SQRT2 * sigma))


def _hawkes_features_loop(times, horizon, centers, sigma, trunc):
    m = times.shape[0]
    hp = centers.shape[0]
    left = np.zeros((m + 1, hp))
    integ = np.zeros((m + 1, hp))
    for i in range(m + 1):
        s = 0.0 if i == 0 else times[i - 1]
        e = horizon if i == m else times[i]
        # integral over (s, e] from events t_j <= s
        j = i - 1
        while j >= 0:
            lag_s = s - times[j]
            if lag_s >= trunc:
                break
            lag_e = min(e - times[j], trunc)
            for h in range(hp):
                integ[i, h] += (_gauss_cdf_part(lag_e, centers[h], sigma)
                                - _gauss_cdf_part(lag_s, centers[h], sigma))
            j -= 1
        # intensity at s from events strictly before s
        if i >= 1:
            j = i - 2
            while j >= 0:
                lag = s - times[j]
                if lag > trunc:
                    break
                if lag > 0.0:
                    for h in range(hp):
                        z = (lag - centers[h]) / sigma
                        left[i, h] += math.exp(-0.5 * z * z) / (_SQRT2PI * sigma)
                j -= 1
    return left, integ


def hawkes_features_numpy(times, horizon, centers, sigma, trunc):
    """Excitation features for one sequence.

    Returns ``(left, integ)``, both of shape ``(M + 1, H')``: the excitation
    basis summed over history at each interval's left endpoint, and its
    integral over each interval ``(t_{i-1}, t_i]``.
    """
    from scipy.special import erf

    times = np.asarray(times, dtype=np.float64)
    m = times.shape[0]
    hp = centers.shape[0]
    starts = np.concatenate(([0.0], times))
    ends = np.concatenate((times, [horizon]))
    if m == 0:
        return np.zeros((1, hp)), np.zeros((1, hp))
    # history j contributes to interval i iff j <= i - 1 (0-based: j < i)
    idx_i = np.arange(m + 1)[:, None]
    idx_j = np.arange(m)[None, :]
    hist = idx_j < idx_i
    lag_s = starts[:, None] - times[None, :]
    lag_e = np.minimum(ends[:, None] - times[None, :], trunc)
    active = hist & (lag_s < trunc)
    lag_s = np.where(active, lag_s, 0.0)
    lag_e = np.where(active, lag_e, 0.0)
    c = centers[None, None, :]
    scale = _SQRT2 * sigma
    diff = 0.5 * (erf((lag_e[..., None] - c) / scale) - erf((lag_s[..., None] - c) / scale))
    integ = np.where(active[..., None], diff, 0.0).sum(axis=1)
    raw = starts[:, None] - times[None, :]
    strict = (idx_j < idx_i - 1) & (raw > 0.0) & (raw <= trunc)
    lag = np.where(strict, raw, 0.0)
    dens = np.exp(-0.5 * ((lag[..., None] - c) / sigma) ** 2) / (_SQRT2PI * sigma)
    left = np.where(strict[..., None], dens, 0.0).sum(axis=1)
    return left, integ


if HAVE_NUMBA:
    _gauss_cdf_part = numba.njit(cache=True)(_gauss_cdf_part)
    _reflect_scalar = numba.njit(cache=True)(_reflect_scalar)
    reflect_numba = numba.njit(cache=True)(_reflect_loop)
    hawkes_features_numba = numba.njit(cache=True)(_hawkes_features_loop)

    def reflect(x):
        return reflect_numba(np.ascontiguousarray(x, dtype=np.float64))

    def hawkes_features(times, horizon, centers, sigma, trunc):
        return hawkes_features_numba(np.ascontiguousarray(times, dtype=np.float64),
                                     float(horizon),
                                     np.ascontiguousarray(centers, dtype=np.float64),
                                     float(sigma), float(trunc))
else:
    reflect_numba = None
    hawkes_features_numba = None
    reflect = reflect_numpy
    hawkes_features = hawkes_features_numpy
