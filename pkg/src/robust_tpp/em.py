"""Weighted mixture EM for clustering event sequences.

Each outer iteration freezes the interval weights at the current
coefficients, updates responsibilities from the weighted quasi-likelihood,
re-estimates class probabilities, takes one projected gradient-ascent step
on every class's coefficients and finally widens ``rho`` if a class keeps
too little of the observed time.
"""
import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.optimize import nnls
from scipy.special import logsumexp

from .influence import DEFAULT_SHAPE, RhoPair
from .intensity import (TAU_FLOOR, baseline_cumulative, design_batch, left_log_intensity)
from .weights import (COVERAGE_MODES, adjust_rho, batch_class_weights,
                      batch_coverage, row_overall_weights, tables_from_rows)

log = logging.getLogger(__name__)

PI_LOW = 1e-3


class NumericalError(RuntimeError):
    """Raised when the fitting loop produces non-finite quantities."""


@dataclass
class FitConfig:
    """Settings for :func:`fit`.

    ``lr`` fixes a common step size for every class; when None, class ``k``
    uses ``lr_scale / (L * sum_n r_nk)``. ``line_search`` backtracks each
    step until the class objective increases. ``coverage_mode`` selects how the
    rho constraint pools sequences: ``"responsibility"`` weights each
    sequence by its membership of the class, ``"all"`` counts every sequence
    for every class.
    """

    K: int
    basis: object
    horizon: object
    rho_init: RhoPair = field(default_factory=RhoPair)
    lr: float | None = None
    lr_scale: float = 1.0
    line_search: bool = True
    epsilon: float = 0.1
    max_iter: int = 500
    T_switch: int = 5
    seed: int = 0
    pi_low: float = PI_LOW
    adjust_rho: bool = True
    coverage_mode: str = "responsibility"
    unit_weights: bool = False
    alpha_tilde: float = 0.6
    init_bins: int | None = None
    shape: object = DEFAULT_SHAPE

    def validate(self, n_sequences):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.K > n_sequences:
            raise ValueError(f"K={self.K} exceeds the number of sequences {n_sequences}")
        if self.lr is not None and not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not (0.0 <= self.pi_low * self.K < 1.0):
            raise ValueError("pi_low * K must be below 1")
        if self.coverage_mode not in COVERAGE_MODES:
            raise ValueError(f"coverage_mode must be one of {COVERAGE_MODES}")
        if not (0.0 < self.alpha_tilde < 1.0):
            raise ValueError("alpha_tilde must lie in (0, 1)")

    def to_dict(self):
        return {
            "K": self.K, "basis": self.basis.to_dict(),
            "horizon": {"T": self.horizon.T, "L": self.horizon.L},
            "rho_init": self.rho_init.to_list(), "lr": self.lr, "lr_scale": self.lr_scale,
            "line_search": self.line_search, "epsilon": self.epsilon,
            "max_iter": self.max_iter, "T_switch": self.T_switch, "seed": self.seed,
            "pi_low": self.pi_low, "adjust_rho": self.adjust_rho,
            "coverage_mode": self.coverage_mode, "unit_weights": self.unit_weights,
            "alpha_tilde": self.alpha_tilde, "init_bins": self.init_bins,
            "shape": {"a": self.shape.a, "b": self.shape.b},
        }


@dataclass
class MixtureState:
    """Class probabilities, coefficients (``K`` rows) and the rho pair."""

    K: int
    pi: np.ndarray
    params: np.ndarray
    rho: RhoPair
    iteration: int = 0
    strategy: str = "max"

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=np.float64).reshape(-1)
        self.params = np.atleast_2d(np.asarray(self.params, dtype=np.float64))
        if self.pi.size != self.K or self.params.shape[0] != self.K:
            raise ValueError("state dimensions disagree with K")
        if abs(self.pi.sum() - 1.0) > 1e-10 or np.any(self.pi < 0):
            raise ValueError("class probabilities must lie on the simplex")
        if np.any(self.params < 0):
            raise ValueError("coefficients must be nonnegative")


@dataclass
class Responsibilities:
    """Row-stochastic ``N x K`` matrix of pseudo-posterior memberships."""

    r: np.ndarray

    def __post_init__(self):
        self.r = np.atleast_2d(np.asarray(self.r, dtype=np.float64))
        if np.any(self.r < 0) or np.any(np.abs(self.r.sum(axis=1) - 1.0) > 1e-10):
            raise ValueError("responsibility rows must lie on the simplex")

    def labels(self):
        # argmax returns the first maximum, so ties go to the lowest index
        return np.argmax(self.r, axis=1)


@dataclass
class TraceRow:
    iteration: int
    delta: float
    coverage: float
    objective: float
    rho1: float
    rho2: float
    strategy: str


@dataclass
class FitResult:
    state: MixtureState
    responsibilities: Responsibilities
    weight_tables: list
    trace: list
    detected_intervals: list
    converged: bool
    config: FitConfig

    @property
    def labels(self):
        return self.responsibilities.labels()


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def _interval_terms(design, B):
    """Per-row ``log lambda(t_{i-1})`` (0 on first rows) and compensators."""
    B = np.atleast_2d(B)
    loglam, lam = left_log_intensity(design.left, B.T, design.first)
    comp = np.maximum(design.integ @ B.T, 0.0)
    return loglam, lam, comp


def batch_log_wtpp(design, B, row_W):
    """``log WTPP`` for every (sequence, class); shape ``(N, K)``.

    ``row_W`` holds the overall weight of each interval row.
    """
    loglam, _, comp = _interval_terms(design, B)
    return design.seq_sum(row_W[:, None] * (loglam - comp))


def log_wtpp(sequence, params, basis, horizon, W):
    """Weighted log quasi-likelihood of one sequence under one class.

    ``sum_{i=1}^{M+1} W_i (log lambda(t_{i-1}) - int_{t_{i-1}}^{t_i} lambda)``
    with ``lambda(t_0) = 1`` and ``t_{M+1} = T0``.
    """
    W = np.asarray(W, dtype=np.float64).reshape(-1)
    if W.size != len(sequence) + 1:
        raise ValueError(f"need {len(sequence) + 1} weights, got {W.size}")
    design = design_batch(basis, horizon, [sequence])
    return float(batch_log_wtpp(design, np.asarray(params, dtype=np.float64)[None, :], W)[0, 0])


def e_step_from_loglik(log_pi, loglik):
    """Softmax over classes of ``log pi_k + loglik[n, k]`` with max-shift."""
    z = loglik + log_pi[None, :]
    if not np.all(np.isfinite(z)):
        raise NumericalError("non-finite class log-likelihood in the E-step")
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=1, keepdims=True)


def e_step(sequences, state, weight_tables, basis, horizon):
    """Responsibilities from the overall weights stored in ``weight_tables``."""
    design = design_batch(basis, horizon, sequences)
    row_W = np.concatenate([t.overall for t in weight_tables])
    loglik = batch_log_wtpp(design, state.params, row_W)
    return Responsibilities(e_step_from_loglik(np.log(state.pi), loglik))


def update_pi(r, pi_low=PI_LOW):
    """Column means of ``r`` floored at ``pi_low`` and renormalised."""
    rr = r.r if isinstance(r, Responsibilities) else np.atleast_2d(r)
    pi = rr.mean(axis=0)
    pi = np.maximum(pi, pi_low)
    return pi / pi.sum()


def batch_gradient(design, B, r, row_w):
    """Gradient of the frozen-weight objective for every class; ``(K, P)``.

    For class ``k`` this is ``sum_n r_nk sum_{i=1}^{M_n} w_ik (left_i /
    lambda_k(t_{i-1}) - integ_i)``. The first interval carries no log term
    and the terminal stretch is excluded.
    """
    B = np.atleast_2d(B)
    _, lam, _ = _interval_terms(design, B)
    keep = ~design.terminal
    K = B.shape[0]
    row_r = np.asarray(r)[design.seq]
    coef = np.where(keep[:, None], row_w * row_r, 0.0)  # (rows, K)
    inv = np.where(lam > TAU_FLOOR, 1.0 / np.maximum(lam, TAU_FLOOR), 0.0)
    inv[design.first] = 0.0
    grad = np.empty_like(B)
    for k in range(K):
        grad[k] = (coef[:, k] * inv[:, k]) @ design.left - coef[:, k] @ design.integ
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite gradient in the M-step")
    return grad


def step_sizes(cfg, r, n_sequences):
    """Per-class step sizes.

    A fixed ``cfg.lr`` is used for every class. Otherwise class ``k`` steps
    by ``cfg.lr_scale / (L * sum_n r_nk)``, i.e. ``lr_scale`` times the mean
    per-sequence, per-period gradient.
    """
    K = r.shape[1]
    if cfg.lr is not None:
        return np.full(K, float(cfg.lr))
    mass = np.maximum(r.sum(axis=0), 1.0)
    return cfg.lr_scale / (cfg.horizon.L * mass)


def ascent_step(design, B, r, row_w, grad, lr, line_search=True, shrink=0.5, max_halvings=40,
                armijo=1e-4):
    """Projected gradient step ``max(B + lr * grad, 0)`` for every class.

    With ``line_search`` the step of each class is halved until its frozen
    objective increases by the Armijo margin; a class that never improves
    keeps its coefficients.
    """
    B_new = np.maximum(B + lr[:, None] * grad, 0.0)
    if not line_search:
        return B_new
    f0 = frozen_objective(design, B, r, row_w)
    for k in range(B.shape[0]):
        step = lr[k]
        for _ in range(max_halvings):
            cand = B.copy()
            cand[k] = np.maximum(B[k] + step * grad[k], 0.0)
            f1 = frozen_objective(design, cand, r, row_w)[k]
            if np.isfinite(f1) and f1 >= f0[k] + armijo * grad[k] @ (cand[k] - B[k]):
                B_new[k] = cand[k]
                break
            step *= shrink
        else:
            B_new[k] = B[k]
    return B_new


def frozen_objective(design, B, r, row_w):
    """Objective whose gradient is :func:`batch_gradient`; for checks."""
    loglam, _, comp = _interval_terms(design, B)
    keep = ~design.terminal
    row_r = np.asarray(r)[design.seq]
    return np.where(keep[:, None], row_w * row_r * (loglam - comp), 0.0).sum(axis=0)


def m_step_gradient(sequences, r, state, weight_tables, basis, horizon):
    """Per-class gradient using class weights frozen in ``weight_tables``."""
    design = design_batch(basis, horizon, sequences)
    row_w = np.concatenate([t.class_weights.T for t in weight_tables])
    rr = r.r if isinstance(r, Responsibilities) else np.atleast_2d(r)
    return batch_gradient(design, state.params, rr, row_w)


# ---------------------------------------------------------------------------
# initialisation
# ---------------------------------------------------------------------------

def binned_counts(sequences, horizon, n_bins):
    """Per-period event counts in ``n_bins`` equal bins, averaged over periods."""
    T = horizon.T
    edges = np.linspace(0.0, T, n_bins + 1)
    feats = np.empty((len(sequences), n_bins))
    for n, s in enumerate(sequences):
        counts, _ = np.histogram(np.mod(s.times, T), bins=edges)
        feats[n] = counts / horizon.L
    return feats, edges


def initial_params(sequences, basis, horizon, K, seed, n_init=10, fit_bins=None):
    """k-means++ on binned counts, then NNLS of group mean counts on the
    per-bin basis integrals. Excitation coefficients start at zero.

    The best of ``n_init`` k-means++ restarts (lowest within-group sum of
    squares) is kept.
    """
    feats, edges = binned_counts(sequences, horizon, basis.H)
    rng = np.random.default_rng(seed)
    if K == 1:
        labels = np.zeros(len(sequences), dtype=int)
    else:
        best = np.inf
        for _ in range(n_init):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                cent, lab = kmeans2(feats, K, minit="++", seed=rng)
            inertia = float(((feats - cent[lab]) ** 2).sum())
            if inertia < best:
                best, labels = inertia, lab
    if fit_bins is not None and fit_bins != basis.H:
        feats, edges = binned_counts(sequences, horizon, fit_bins)
    cum = baseline_cumulative(basis, edges)
    A = np.diff(cum, axis=0)  # (bins, H)
    B0 = np.zeros((K, basis.n_params))
    overall = feats.mean(axis=0)
    for k in range(K):
        members = labels == k
        target = feats[members].mean(axis=0) if members.any() else overall
        B0[k, :basis.H], _ = nnls(A, target)
    return B0, labels


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def _row_weights(design, B, rho, cfg):
    if cfg.unit_weights:
        return np.ones((design.seq.size, np.atleast_2d(B).shape[0]))
    return batch_class_weights(design, B, rho, cfg.shape)


def _overall(row_w, row_r, strategy, cfg):
    # with unit weights any convex combination is exactly 1; avoid rounding
    if cfg.unit_weights:
        return np.ones(row_w.shape[0])
    return row_overall_weights(row_w, row_r, strategy)


def _objective(log_pi, loglik):
    return float(logsumexp(loglik + log_pi[None, :], axis=1).sum())


def _coverage(design, row_w, cfg, r):
    return batch_coverage(design, row_w, cfg.horizon,
                          r if cfg.coverage_mode == "responsibility" else None)


def enforce_rho(design, B, rho, r, cfg):
    """Escalate ``rho`` until every class keeps at least half of the
    observed time, or the cap is reached.

    Returns ``(rho, row_w, coverage)`` with the weights at the final rho.
    """
    row_w = _row_weights(design, B, rho, cfg)
    cov = _coverage(design, row_w, cfg, r)
    if cfg.unit_weights or not cfg.adjust_rho:
        return rho, row_w, cov
    while cov.min() < 0.5:
        new_rho, at_cap = adjust_rho(rho, float(cov.min()))
        if at_cap:
            break
        rho = new_rho
        row_w = _row_weights(design, B, rho, cfg)
        cov = _coverage(design, row_w, cfg, r)
    return rho, row_w, cov


def _run(sequences, cfg, init_state=None):
    N = len(sequences)
    cfg.validate(N)
    basis, horizon = cfg.basis, cfg.horizon
    design = design_batch(basis, horizon, sequences)
    if init_state is None:
        B0, groups = initial_params(sequences, basis, horizon, cfg.K, cfg.seed,
                                   fit_bins=cfg.init_bins)
        state = MixtureState(cfg.K, np.full(cfg.K, 1.0 / cfg.K), B0, cfg.rho_init)
        # initial memberships from the k-means groups (used for the rho check only)
        r = np.eye(cfg.K)[groups]
    else:
        state = replace(init_state, params=init_state.params.copy(), pi=init_state.pi.copy())
        r = np.full((N, cfg.K), 1.0 / cfg.K)
    trace = []
    converged = False
    rho, row_w, _ = enforce_rho(design, state.params, state.rho, r, cfg)
    state = replace(state, rho=rho)
    for t in range(1, cfg.max_iter + 1):
        strategy = "max" if t <= cfg.T_switch else "mixture"
        row_W = _overall(row_w, r[design.seq], strategy, cfg)
        loglik = batch_log_wtpp(design, state.params, row_W)
        log_pi = np.log(state.pi)
        objective = _objective(log_pi, loglik)
        r = e_step_from_loglik(log_pi, loglik)
        pi = update_pi(r, cfg.pi_low)
        grad = batch_gradient(design, state.params, r, row_w)
        B_new = ascent_step(design, state.params, r, row_w, grad, step_sizes(cfg, r, N),
                            cfg.line_search)
        delta = float(np.max(np.linalg.norm(B_new - state.params, axis=1)))
        rho, row_w, cov = enforce_rho(design, B_new, state.rho, r, cfg)
        state = MixtureState(cfg.K, pi, B_new, rho, t, strategy)
        trace.append(TraceRow(t, delta, float(cov.min()), objective, rho.rho1, rho.rho2, strategy))
        if delta <= cfg.epsilon:
            converged = True
            break
    if not converged:
        log.warning("iteration cap %d reached without meeting epsilon=%g", cfg.max_iter, cfg.epsilon)
    final_strategy = "max" if state.iteration < cfg.T_switch else "mixture"
    row_W = _overall(row_w, r[design.seq], final_strategy, cfg)
    tables = tables_from_rows(design, row_w, row_W, final_strategy)
    resp = Responsibilities(r)
    result = FitResult(state, resp, tables, trace, [], converged, cfg)
    result.detected_intervals = detect_outlier_intervals(result, sequences, cfg.alpha_tilde)
    return result


def fit(sequences, config, init_state=None):
    """Robust weighted EM. See :class:`FitConfig` for the settings."""
    return _run(sequences, config, init_state)


def fit_unweighted(sequences, config, init_state=None):
    """Standard mixture EM: every weight fixed at 1 and no rho adjustment."""
    cfg = replace(config, unit_weights=True, adjust_rho=False)
    return _run(sequences, cfg, init_state)


# ---------------------------------------------------------------------------
# detection
# ---------------------------------------------------------------------------

def flagged_mask(result, alpha_tilde=0.6):
    """Per-sequence boolean arrays: interval weight under the assigned class
    below ``alpha_tilde``."""
    labels = result.labels
    return [tab.class_weights[labels[n]] < alpha_tilde
            for n, tab in enumerate(result.weight_tables)]


def detect_outlier_intervals(result, sequences, alpha_tilde=0.6):
    """Merged runs of flagged intervals as ``(t_start, t_end, min_weight)``."""
    if not (0.0 < alpha_tilde < 1.0):
        raise ValueError("alpha_tilde must lie in (0, 1)")
    T0 = result.config.horizon.T0
    labels = result.labels
    out = []
    for n, (seq, tab) in enumerate(zip(sequences, result.weight_tables)):
        w = tab.class_weights[labels[n]]
        starts = np.concatenate(([0.0], seq.times))
        ends = np.concatenate((seq.times, [T0]))
        runs = []
        i = 0
        while i < w.size:
            if w[i] < alpha_tilde:
                j = i
                while j + 1 < w.size and w[j + 1] < alpha_tilde:
                    j += 1
                runs.append((float(starts[i]), float(ends[j]), float(w[i:j + 1].min())))
                i = j + 1
            else:
                i += 1
        out.append(runs)
    return out
