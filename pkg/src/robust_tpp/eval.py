"""Metrics and experiment analyses.

Clustering purity, detection rates of contaminated time, the integrated
weight index, the weighted-to-unweighted gradient norm ratio and an L1
index comparing smoothed sequence intensities with fitted class intensities.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import minimize

from .em import batch_gradient
from .influence import DEFAULT_SHAPE, RhoPair, phi_prime_scaled
from .intensity import (BasisSpec, DesignBatch, EventSequence, HorizonSpec,
                        baseline_cumulative, baseline_values, design_batch)
from .simulate import BENCH_BASELINES, BENCH_T, TrueIntensitySpec, substream, thin_function
from .weights import batch_class_weights, read_weight_csv, weights_from_compensators


def _mean_se(x):
    x = np.asarray(x, dtype=np.float64)
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")
    return float(x.mean()), se


# ---------------------------------------------------------------------------
# purity
# ---------------------------------------------------------------------------

def purity(predicted, truth):
    """``(1/N) sum_k max_k' |S_hat_k & S*_k'|``."""
    pred = np.asarray(predicted).reshape(-1)
    true = np.asarray(truth).reshape(-1)
    if pred.size != true.size:
        raise ValueError(f"length mismatch: {pred.size} predicted vs {true.size} true labels")
    if pred.size == 0:
        raise ValueError("purity needs at least one label")
    _, p_idx = np.unique(pred, return_inverse=True)
    _, t_idx = np.unique(true, return_inverse=True)
    table = np.zeros((p_idx.max() + 1, t_idx.max() + 1), dtype=np.int64)
    np.add.at(table, (p_idx, t_idx), 1)
    return float(table.max(axis=1).sum() / pred.size)


# ---------------------------------------------------------------------------
# detection rates
# ---------------------------------------------------------------------------

@dataclass
class DetectionGroundTruth:
    """Per-sequence interval edges, weights under the assigned class and
    true contamination windows; ``alpha_tilde`` is the flagging threshold."""

    starts: list
    ends: list
    weights: list
    windows: list
    alpha_tilde: float = 0.6
    t_begin: float = 0.0
    t_end: float = None

    def __post_init__(self):
        if not (0.0 < self.alpha_tilde < 1.0):
            raise ValueError("alpha_tilde must lie in (0, 1)")
        n = len(self.starts)
        if not (len(self.ends) == len(self.weights) == len(self.windows) == n):
            raise ValueError("per-sequence inputs disagree in length")

    @classmethod
    def from_fit(cls, result, sequences, alpha_tilde=None):
        T0 = result.config.horizon.T0
        alpha = result.config.alpha_tilde if alpha_tilde is None else alpha_tilde
        labels = result.labels
        starts, ends, weights, windows = [], [], [], []
        for n, (s, tab) in enumerate(zip(sequences, result.weight_tables)):
            starts.append(np.concatenate(([0.0], s.times)))
            ends.append(np.concatenate((s.times, [T0])))
            weights.append(tab.class_weights[labels[n]])
            windows.append(list(s.contamination_windows))
        return cls(starts, ends, weights, windows, alpha, 0.0, T0)

    @classmethod
    def from_weight_csv(cls, path, ids, labels, windows, alpha_tilde=0.6, T0=None):
        """Build from an exported weight table; ``ids``, ``labels`` and
        ``windows`` are aligned per sequence."""
        tables = read_weight_csv(path)
        starts, ends, weights = [], [], []
        for sid, k in zip(ids, labels):
            st, en, tab = tables[sid]
            starts.append(st)
            ends.append(en)
            weights.append(tab.class_weights[k])
        t_end = T0 if T0 is not None else max(float(e[-1]) for e in ends)
        return cls(starts, ends, weights, [list(w) for w in windows], alpha_tilde, 0.0, t_end)


def _overlap(starts, ends, windows):
    """Total overlap of each interval with a union of disjoint windows."""
    out = np.zeros(len(starts))
    for a, b in windows:
        out += np.clip(np.minimum(ends, b) - np.maximum(starts, a), 0.0, None)
    return out


def tpr_tnr(detection):
    """Per-sequence and averaged detection rates.

    A time point is flagged when its covering interval has weight below
    ``alpha_tilde``. TPR is the flagged share of contaminated time and TNR
    the unflagged share of clean time. Sequences without contamination are
    left out of the TPR average. Returns a dict with ``tpr``/``tnr`` arrays
    (``nan`` where undefined) and their means.
    """
    d = detection
    tpr, tnr = [], []
    for st, en, w, win in zip(d.starts, d.ends, d.weights, d.windows):
        st = np.asarray(st, dtype=np.float64)
        en = np.asarray(en, dtype=np.float64)
        flag = np.asarray(w) < d.alpha_tilde
        lengths = en - st
        inside = _overlap(st, en, win)
        total = float(lengths.sum())
        cont = float(sum(b - a for a, b in win))
        hit = float(inside[flag].sum())
        false_flag = float((lengths - inside)[flag].sum())
        tpr.append(hit / cont if cont > 0 else np.nan)
        clean = total - cont
        tnr.append((clean - false_flag) / clean if clean > 0 else np.nan)
    tpr = np.asarray(tpr)
    tnr = np.asarray(tnr)
    return {
        "tpr": tpr, "tnr": tnr,
        "mean_tpr": float(np.nanmean(tpr)) if np.any(~np.isnan(tpr)) else float("nan"),
        "mean_tnr": float(np.nanmean(tnr)) if np.any(~np.isnan(tnr)) else float("nan"),
    }


# ---------------------------------------------------------------------------
# integrated weight index
# ---------------------------------------------------------------------------

def integrated_weight_index(sample_intensity, reference_intensity, alpha_tilde=0.6,
                            rho=RhoPair(), mc_draws=10_000, seed=0, horizon=None,
                            shape=DEFAULT_SHAPE):
    """Monte-Carlo estimate of ``E_{S ~ lambda'}[sum_i 1{w_i > alpha} (t_i -
    t_{i-1})]`` with ``w_i`` computed under ``reference_intensity``.

    Both intensities are :class:`TrueIntensitySpec` baselines. The sum runs
    over the ``M`` inter-event intervals. Returns ``(mean, standard_error)``.
    """
    if horizon is None:
        horizon = HorizonSpec(sample_intensity.period, 1)
    T0 = horizon.T0
    rng = np.random.default_rng(seed)
    bound = sample_intensity.envelope
    vals = np.empty(mc_draws)
    for r in range(mc_draws):
        t = thin_function(sample_intensity.baseline, bound, 0.0, T0, rng)
        if t.size == 0:
            vals[r] = 0.0
            continue
        pts = np.concatenate(([0.0], t))
        comp = np.diff(reference_intensity.cumulative(pts))
        w = weights_from_compensators(comp, rho, shape)
        vals[r] = float(np.sum((w > alpha_tilde) * np.diff(pts)))
    return _mean_se(vals)


# ---------------------------------------------------------------------------
# homogeneous gradient at the truth
# ---------------------------------------------------------------------------

def homogeneous_design(sequences, T0):
    """One-column design for the constant working model ``lambda = b``."""
    rows, seq, starts, ends = [], [], [], []
    offsets = [0]
    for n, times in enumerate(sequences):
        st = np.concatenate(([0.0], times))
        en = np.concatenate((times, [T0]))
        rows.append(st.size)
        seq.append(np.full(st.size, n))
        starts.append(st)
        ends.append(en)
        offsets.append(offsets[-1] + st.size)
    start = np.concatenate(starts)
    end = np.concatenate(ends)
    left = np.ones((start.size, 1))
    left[np.asarray(offsets[:-1])] = 0.0
    return DesignBatch(left, (end - start)[:, None], np.concatenate(seq),
                       np.asarray(offsets), start, end)


def homogeneous_gradient_draws(rate=2.0, T0=50.0, replicates=2000, seed=0, rho=RhoPair(),
                               shape=DEFAULT_SHAPE):
    """Weighted gradient at the true rate for ``replicates`` independent
    homogeneous sequences, one value per sequence (scaled by ``1/L`` with
    ``L = 1``)."""
    rng = np.random.default_rng(seed)
    seqs = [np.sort(rng.uniform(0.0, T0, rng.poisson(rate * T0))) for _ in range(replicates)]
    design = homogeneous_design(seqs, T0)
    B = np.array([[rate]])
    row_w = batch_class_weights(design, B, rho, shape)
    out = np.empty(replicates)
    for n in range(replicates):
        sl = design.rows(n)
        sub = DesignBatch(design.left[sl], design.integ[sl], np.zeros(sl.stop - sl.start, int),
                          np.array([0, sl.stop - sl.start]), design.start[sl], design.end[sl])
        out[n] = batch_gradient(sub, B, np.ones((1, 1)), row_w[sl])[0, 0]
    return out


# ---------------------------------------------------------------------------
# gradient ratio
# ---------------------------------------------------------------------------

GRADIENT_TRUTH = TrueIntensitySpec(1, BENCH_BASELINES[1], BENCH_T)
GRADIENT_FAMILIES = ("commission-proportional", "commission-constant", "commission-bump",
                     "commission-decay", "omission-proportional", "omission-constant",
                     "omission-bump", "omission-decay")
GRADIENT_C = (1, 2, 4)


def outlier_delta(family, c, truth, t_b, eta, T):
    """Additive intensity change inside ``[t_b, t_b + eta*T]``; the observed
    intensity there is ``max(lambda* + delta, 0)``."""
    mid = t_b + eta * T / 2.0
    root = math.sqrt(2.0 * math.pi)
    table = {
        "commission-proportional": lambda t: c * truth.baseline(t),
        "commission-constant": lambda t: np.full_like(t, float(c)),
        "commission-bump": lambda t: 5.0 * c / root * np.exp(-(t - mid) ** 2 / 2.0),
        "commission-decay": lambda t: 4.0 * c * np.exp(t_b - t),
        "omission-proportional": lambda t: truth.baseline(t) / (c + 1.0) - truth.baseline(t),
        "omission-constant": lambda t: np.full_like(t, -c / 2.0),
        "omission-bump": lambda t: -2.5 * c / root * np.exp(-(t - mid) ** 2 / 2.0),
        "omission-decay": lambda t: -2.0 * c * np.exp(t_b - t),
    }
    if family not in table:
        raise ValueError(f"unknown family {family!r}; choose from {GRADIENT_FAMILIES}")
    return table[family]


def _delta_bound(family, c, truth):
    if family == "commission-proportional":
        return c * truth.envelope
    if family == "commission-constant":
        return float(c)
    if family == "commission-bump":
        return 5.0 * c / math.sqrt(2.0 * math.pi)
    if family == "commission-decay":
        return 4.0 * c
    return 0.0


def sample_outlier_sequence(truth, horizon, family, c, eta, rng):
    """Clean draw outside one window ``[t_b, t_b + eta*T]`` and the altered
    intensity inside it. Returns ``(times, (t_b, t_e))``."""
    T0, T = horizon.T0, horizon.T
    width = eta * T
    t_b = float(rng.uniform(0.0, T0 - width))
    t_e = t_b + width
    delta = outlier_delta(family, c, truth, t_b, eta, T) if eta > 0 else None
    bound = truth.envelope
    before = thin_function(truth.baseline, bound, 0.0, t_b, rng)
    if delta is None:
        inside = thin_function(truth.baseline, bound, t_b, t_e, rng)
    else:
        rate = lambda t: np.maximum(truth.baseline(t) + delta(t), 0.0)  # noqa: E731
        inside = thin_function(rate, bound + _delta_bound(family, c, truth), t_b, t_e, rng)
    after = thin_function(truth.baseline, bound, t_e, T0, rng)
    return np.concatenate((before, inside, after)), (t_b, t_e)


def expected_log_likelihood_optimum(truth, basis, grid=10_000):
    """Working-model coefficients maximising ``int_0^T lambda* log lambda_B -
    lambda_B`` over one period (nonnegative, baseline part only)."""
    tau = np.linspace(0.0, basis.period, grid + 1)
    lam_star = truth.baseline(tau)
    K = baseline_values(basis, tau)
    wts = np.full(tau.size, basis.period / grid)
    wts[[0, -1]] *= 0.5
    kint = np.diff(baseline_cumulative(basis, np.array([0.0, basis.period])), axis=0)[0]

    def neg(b):
        lam = np.maximum(K @ b, 1e-12)
        val = wts @ (lam_star * np.log(lam)) - kint @ b
        grad = K.T @ (wts * lam_star / lam) - kint
        return -val, -grad

    b0 = np.full(basis.H, float(wts @ lam_star) / float(kint.sum()))
    res = minimize(neg, b0, jac=True, method="L-BFGS-B", bounds=[(0.0, None)] * basis.H,
                   options={"maxiter": 2000, "gtol": 1e-10, "ftol": 1e-14})
    return res.x


def gradient_ratio_once(sequences, B, basis, horizon, rho=RhoPair(), shape=DEFAULT_SHAPE,
                        unit_weights=False):
    """``||rho(B)|| / ||rho_bar(B)||`` for one class holding every sequence."""
    design = design_batch(basis, horizon, sequences)
    Bm = np.atleast_2d(B)
    r = np.ones((len(sequences), 1))
    if unit_weights:
        row_w = np.ones((design.seq.size, 1))
    else:
        row_w = batch_class_weights(design, Bm, rho, shape)
    scale = 1.0 / (len(sequences) * horizon.L)
    g_w = scale * batch_gradient(design, Bm, r, row_w)[0]
    g_u = scale * batch_gradient(design, Bm, r, np.ones_like(row_w))[0]
    return float(np.linalg.norm(g_w) / np.linalg.norm(g_u)), g_w, g_u


def gradient_ratio_experiment(family="commission-proportional", c=1, eta=0.2, N=200, seed=0,
                              replicates=50, L=1, H=6, rho=RhoPair(), perturbation=0.1,
                              truth=GRADIENT_TRUTH, unit_weights=False):
    """Mean and standard error of the gradient norm ratio over replicates.

    Each replicate draws ``N`` sequences with one outlier window each and a
    fresh coefficient vector ``B* + U(-perturbation, perturbation)`` clipped
    at zero, where ``B*`` maximises the expected log-likelihood.
    """
    horizon = HorizonSpec(truth.period, int(L))
    basis = BasisSpec.gaussian(truth.period, H)
    B_star = expected_log_likelihood_optimum(truth, basis)
    ratios = np.empty(replicates)
    for rep in range(replicates):
        rng = substream(seed, rep)
        seqs = []
        for n in range(N):
            times, win = sample_outlier_sequence(truth, horizon, family, c, eta, rng)
            seqs.append(EventSequence(f"g{n:04d}", times, 0, [win] if eta > 0 else []))
        B = np.maximum(B_star + rng.uniform(-perturbation, perturbation, B_star.size), 0.0)
        ratios[rep] = gradient_ratio_once(seqs, B, basis, horizon, rho,
                                          unit_weights=unit_weights)[0]
    mean, se = _mean_se(ratios)
    return {"family": family, "c": c, "eta": eta, "N": N, "L": L, "mean": mean, "se": se,
            "ratios": ratios}


# ---------------------------------------------------------------------------
# L1 index
# ---------------------------------------------------------------------------

L1_SMOOTHER_NOTE = ("per-sequence intensity from a periodic Gaussian kernel smoother of "
                    "events folded to one period, bandwidth T/H")


def smoothed_intensity(times, horizon, bandwidth, grid):
    """Events folded to one period, smoothed by a wrapped Gaussian density
    and divided by ``L``; evaluated at ``grid``."""
    T = horizon.T
    tau = np.mod(np.asarray(times, dtype=np.float64), T)
    out = np.zeros(grid.size)
    norm = 1.0 / (math.sqrt(2.0 * math.pi) * bandwidth)
    for shift in (-T, 0.0, T):
        d = grid[:, None] - (tau[None, :] + shift)
        out += norm * np.exp(-0.5 * (d / bandwidth) ** 2).sum(axis=1)
    return out / horizon.L


def l1_errors(sequences, centroids, labels, basis, horizon, alpha=0.9, panels=10_000):
    """Truncated L1 distance between each sequence's smoothed intensity and
    the baseline of its assigned class.

    ``q_alpha`` is the ``alpha`` quantile of the absolute deviations pooled
    over all sequences and grid points. Returns a dict with ``per_sequence``,
    ``median`` and ``q_alpha``.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    grid = np.linspace(0.0, basis.period, panels + 1)
    base = baseline_values(basis, grid) @ np.atleast_2d(centroids)[:, :basis.H].T  # (grid, K)
    bw = basis.period / basis.H
    dev = np.empty((len(sequences), grid.size))
    for n, s in enumerate(sequences):
        dev[n] = np.abs(smoothed_intensity(s.times, horizon, bw, grid) - base[:, labels[n]])
    q = float(np.quantile(dev, alpha))
    kept = np.where(dev < q, dev, 0.0)
    per = trapezoid(kept, grid, axis=1)
    return {"per_sequence": per, "median": float(np.median(per)), "q_alpha": q,
            "smoother": L1_SMOOTHER_NOTE}


def l1_index(fit, sequences, alpha=0.9, panels=10_000):
    """:func:`l1_errors` for the fitted coefficients and labels of ``fit``."""
    cfg = fit.config
    return l1_errors(sequences, fit.state.params, fit.labels, cfg.basis, cfg.horizon,
                     alpha, panels)


def comparison_rate(l1_a, l1_b):
    """Share of sequences where ``a`` has strictly smaller L1 error than ``b``."""
    a = np.asarray(l1_a["per_sequence"] if isinstance(l1_a, dict) else l1_a)
    b = np.asarray(l1_b["per_sequence"] if isinstance(l1_b, dict) else l1_b)
    if a.shape != b.shape:
        raise ValueError("L1 vectors must be aligned")
    return float(np.mean(a < b))
