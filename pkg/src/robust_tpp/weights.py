"""Interval weights: class-specific, overall, and the rho coverage rule.

Class-specific weights score each inter-event interval under one class's
working model by passing its compensator increment through the scaled
influence kernel. Overall weights combine them across classes, either by
taking the maximum (early iterations) or by a responsibility mixture.
"""
import csv
import logging
from dataclasses import dataclass

import numpy as np

from .influence import DEFAULT_SHAPE, RhoPair, phi_prime_scaled
from .intensity import design_batch, sequence_design

log = logging.getLogger(__name__)

RHO_ESCALATION = 1.5
RHO_MAX = 1e3
COVERAGE_TARGET = 0.5
SIMPLEX_TOL = 1e-8
STRATEGIES = ("max", "mixture")
COVERAGE_MODES = ("all", "responsibility")


@dataclass
class WeightTable:
    """Weights of one sequence.

    ``class_weights`` has shape ``(K, M + 1)`` and ``overall`` has ``M + 1``
    entries; ``strategy_used`` is ``"max"`` or ``"mixture"``.
    """

    class_weights: np.ndarray
    overall: np.ndarray
    strategy_used: str

    def __post_init__(self):
        self.class_weights = np.atleast_2d(np.asarray(self.class_weights, dtype=np.float64))
        self.overall = np.asarray(self.overall, dtype=np.float64).reshape(-1)
        if self.class_weights.shape[1] != self.overall.size:
            raise ValueError("class and overall weights disagree on interval count")
        for arr in (self.class_weights, self.overall):
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise ValueError("weights must lie in [0, 1]")

    @property
    def K(self):
        return self.class_weights.shape[0]


def weights_from_compensators(compensators, rho=RhoPair(), shape=DEFAULT_SHAPE):
    """``phi'_rho(c - 1)`` elementwise for compensator increments ``c >= 0``."""
    c = np.maximum(np.asarray(compensators, dtype=np.float64), 0.0)
    return phi_prime_scaled(c - 1.0, rho, shape)


def class_weights(sequence, params, basis, horizon, rho=RhoPair(), shape=DEFAULT_SHAPE):
    """Weights of the ``M + 1`` intervals of ``sequence`` under one class."""
    sequence.validate(horizon)
    _, integ, _, _ = sequence_design(basis, horizon, sequence.times)
    comp = integ @ np.asarray(params, dtype=np.float64)
    return np.atleast_1d(weights_from_compensators(comp, rho, shape))


def _check_simplex(r):
    r = np.asarray(r, dtype=np.float64)
    if np.any(r < -SIMPLEX_TOL) or np.any(np.abs(r.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
        raise ValueError("responsibilities must lie on the probability simplex")
    return r


def overall_weights(class_w, responsibilities=None, strategy="max"):
    """Combine a ``(K, M + 1)`` block of class weights into one vector.

    ``strategy="max"`` takes the columnwise maximum; ``"mixture"`` takes the
    convex combination with the length-K ``responsibilities``.
    """
    w = np.atleast_2d(np.asarray(class_w, dtype=np.float64))
    if strategy == "max":
        return w.max(axis=0)
    if strategy != "mixture":
        raise ValueError(f"unknown strategy {strategy!r}")
    if responsibilities is None:
        raise ValueError("mixture strategy needs responsibilities")
    r = _check_simplex(responsibilities).reshape(-1)
    if r.size != w.shape[0]:
        raise ValueError("one responsibility per class required")
    return np.clip(r @ w, 0.0, 1.0)


def row_overall_weights(row_w, row_r=None, strategy="max"):
    """Batched form of :func:`overall_weights`.

    ``row_w`` is ``(rows, K)``; ``row_r`` holds the owning sequence's
    responsibilities repeated per row.
    """
    if strategy == "max":
        return row_w.max(axis=1)
    if strategy != "mixture":
        raise ValueError(f"unknown strategy {strategy!r}")
    r = _check_simplex(row_r)
    return np.clip(np.einsum("rk,rk->r", row_w, r), 0.0, 1.0)


def batch_class_weights(design, B, rho=RhoPair(), shape=DEFAULT_SHAPE):
    """Class weights for every row of a :class:`DesignBatch`; ``(rows, K)``."""
    comp = design.integ @ np.atleast_2d(np.asarray(B, dtype=np.float64)).T
    return weights_from_compensators(comp, rho, shape)


def batch_coverage(design, row_w, horizon, responsibilities=None):
    """Coverage of each class: weighted inter-event time over ``N * T0``.

    Intervals ``1..M`` of every sequence count; the terminal stretch after the
    last event does not. With ``responsibilities`` (shape ``(N, K)``) each
    sequence contributes in proportion to its membership of the class and the
    normaliser becomes ``sum_n r_nk * T0``.
    """
    w = np.asarray(row_w, dtype=np.float64)
    if w.ndim == 1:
        w = w[:, None]
    keep = ~design.terminal
    timed = np.where(keep[:, None], w * design.lengths[:, None], 0.0)
    per_seq = design.seq_sum(timed)
    if responsibilities is None:
        return per_seq.sum(axis=0) / (design.n_sequences * horizon.T0)
    r = np.asarray(responsibilities, dtype=np.float64)
    mass = np.maximum(r.sum(axis=0), 1e-300)
    return (r * per_seq).sum(axis=0) / (mass * horizon.T0)


def check_rho_constraint(sequences, weight_tables, k, horizon, responsibilities=None):
    """Coverage of class ``k`` computed from per-sequence weight tables.

    Without ``responsibilities`` this is ``(1 / (N T0)) sum_n sum_{i<=M}
    w_i (t_i - t_{i-1})``. Returns ``{"satisfied": bool, "coverage": float}``.
    """
    num = 0.0
    den = 0.0
    for n, (seq, tab) in enumerate(zip(sequences, weight_tables)):
        gaps = np.diff(np.concatenate(([0.0], seq.times)))
        contrib = float(np.dot(tab.class_weights[k][:-1], gaps))
        r = 1.0 if responsibilities is None else float(responsibilities[n][k])
        num += r * contrib
        den += r
    cov = num / (max(den, 1e-300) * horizon.T0)
    return {"satisfied": bool(cov >= COVERAGE_TARGET), "coverage": cov}


def adjust_rho(current, coverage, factor=RHO_ESCALATION, cap=RHO_MAX):
    """Scale both components of ``current`` by ``factor`` if coverage < 1/2.

    Returns ``(rho, at_cap)``. Once both components sit at ``cap`` the pair is
    returned unchanged, a warning is logged and ``at_cap`` is True.
    """
    if coverage >= COVERAGE_TARGET:
        return current, False
    if current.rho1 >= cap and current.rho2 >= cap:
        log.warning("rho at cap %.3g with coverage %.3f; constraint no longer enforced",
                    cap, coverage)
        return current, True
    return current.scaled(factor, cap), False


def tables_from_rows(design, row_w, overall, strategy):
    """Split row-level weights into per-sequence :class:`WeightTable` objects."""
    out = []
    for n in range(design.n_sequences):
        rows = design.rows(n)
        out.append(WeightTable(row_w[rows].T.copy(), overall[rows].copy(), strategy))
    return out


def weight_tables(sequences, B, basis, horizon, rho=RhoPair(), responsibilities=None,
                  strategy="max", shape=DEFAULT_SHAPE):
    """Weight tables for ``sequences`` under coefficient matrix ``B`` (K rows)."""
    design = design_batch(basis, horizon, sequences)
    row_w = batch_class_weights(design, B, rho, shape)
    row_r = None if responsibilities is None else np.asarray(responsibilities)[design.seq]
    overall = row_overall_weights(row_w, row_r, strategy)
    return tables_from_rows(design, row_w, overall, strategy)


def write_weight_csv(path, sequences, tables, horizon):
    """Write ``id,interval_index,t_start,t_end,w_k1..w_kK,W`` rows."""
    K = tables[0].K if tables else 0
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["id", "interval_index", "t_start", "t_end"]
                    + [f"w_k{k + 1}" for k in range(K)] + ["W"])
        for seq, tab in zip(sequences, tables):
            starts = np.concatenate(([0.0], seq.times))
            ends = np.concatenate((seq.times, [horizon.T0]))
            for i in range(starts.size):
                wr.writerow([seq.id, i + 1, repr(float(starts[i])), repr(float(ends[i]))]
                            + [repr(float(v)) for v in tab.class_weights[:, i]]
                            + [repr(float(tab.overall[i]))])


def read_weight_csv(path):
    """Inverse of :func:`write_weight_csv`; returns ``{id: (starts, ends, table)}``."""
    rows = {}
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        K = sum(1 for h in header if h.startswith("w_k"))
        for rec in rd:
            rows.setdefault(rec[0], []).append(rec)
    out = {}
    for sid, recs in rows.items():
        recs.sort(key=lambda r: int(r[1]))
        arr = np.array([[float(v) for v in r[2:]] for r in recs])
        tab = WeightTable(arr[:, 2:2 + K].T, arr[:, 2 + K], "unknown")
        out[sid] = (arr[:, 0], arr[:, 1], tab)
    return out
