"""File formats: event datasets, models and fit outputs.

Events are a CSV with header ``id,time``. A sidecar JSON carries ``T``,
``L``, optional ``labels`` and ``windows``, and the ordered ``ids`` so that
sequences without events survive a round trip. Floats are written with
``repr`` so reading back gives the same values.
"""
import csv
import io as _stdio
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .em import FitConfig, MixtureState
from .influence import InfluenceShape, RhoPair
from .intensity import BasisSpec, EventSequence, HorizonSpec


class DataError(ValueError):
    """Malformed or missing input data."""


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _csv_text(header, rows):
    buf = _stdio.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    wr.writerows(rows)
    return buf.getvalue()


def sidecar_path(events_path):
    p = Path(events_path)
    return p.with_name(p.stem + ".json")


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def write_events(path, sequences, horizon, design=None):
    """Events CSV plus sidecar JSON next to it; ``design`` (if given) goes to
    ``design.json`` in the same directory."""
    rows = [[s.id, repr(float(t))] for s in sequences for t in s.times]
    atomic_write_text(path, _csv_text(["id", "time"], rows))
    side = {
        "T": horizon.T, "L": horizon.L,
        "ids": [s.id for s in sequences],
        "labels": {s.id: int(s.true_label) for s in sequences if s.true_label is not None},
        "windows": {s.id: [[float(a), float(b)] for a, b in s.contamination_windows]
                    for s in sequences},
    }
    atomic_write_text(sidecar_path(path), json.dumps(side, indent=1))
    if design is not None:
        atomic_write_text(Path(path).with_name("design.json"), json.dumps(design, indent=1))


def read_events(path, horizon=None):
    """Return ``(sequences, horizon)``. Without a sidecar, ``horizon`` must
    be supplied and sequences carry neither labels nor windows."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"events file not found: {path}")
    times = {}
    order = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None or [h.strip() for h in header[:2]] != ["id", "time"]:
            raise DataError(f"{path}: expected header 'id,time'")
        for lineno, rec in enumerate(rd, start=2):
            if not rec:
                continue
            try:
                sid, t = rec[0], float(rec[1])
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad row {rec!r}") from exc
            if sid not in times:
                times[sid] = []
                order.append(sid)
            times[sid].append(t)
    side = {}
    sp = sidecar_path(path)
    if sp.exists():
        side = json.loads(sp.read_text())
        horizon = HorizonSpec(float(side["T"]), int(side["L"]))
        order = list(side.get("ids", order))
        for sid in order:
            times.setdefault(sid, [])
    elif horizon is None:
        raise DataError(f"{path}: no sidecar JSON and no horizon given")
    labels = side.get("labels", {})
    windows = side.get("windows", {})
    seqs = []
    for sid in order:
        arr = np.sort(np.asarray(times[sid], dtype=np.float64))
        try:
            s = EventSequence(sid, arr, labels.get(sid),
                              [tuple(w) for w in windows.get(sid, [])])
            s.validate(horizon)
        except ValueError as exc:
            raise DataError(f"sequence {sid}: {exc}") from exc
        seqs.append(s)
    return seqs, horizon


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

def model_dict(result):
    st = result.state
    cfg = result.config
    return {
        "K": st.K,
        "basis": cfg.basis.to_dict(),
        "horizon": {"T": cfg.horizon.T, "L": cfg.horizon.L},
        "pi": [float(v) for v in st.pi],
        "B": [[float(v) for v in row] for row in st.params],
        "rho": st.rho.to_list(),
        "iteration": st.iteration,
        "strategy": st.strategy,
        "converged": bool(result.converged),
        "config": cfg.to_dict(),
        "trace": [vars(row) for row in result.trace],
    }


def write_model(path, result):
    atomic_write_text(path, json.dumps(model_dict(result), indent=1))


def read_model(path):
    """Return ``(state, basis, horizon, payload)`` from a model JSON."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"model file not found: {path}")
    d = json.loads(path.read_text())
    basis = BasisSpec.from_dict(d["basis"])
    horizon = HorizonSpec(float(d["horizon"]["T"]), int(d["horizon"]["L"]))
    state = MixtureState(int(d["K"]), np.asarray(d["pi"]), np.asarray(d["B"]),
                         RhoPair(*d["rho"]), int(d.get("iteration", 0)),
                         d.get("strategy", "max"))
    return state, basis, horizon, d


def config_from_model(payload, basis, horizon):
    """Rebuild the :class:`FitConfig` stored in a model payload."""
    c = dict(payload["config"])
    shape = c.pop("shape", None)
    c.pop("basis", None)
    c.pop("horizon", None)
    rho = c.pop("rho_init", [1.0, 1.0])
    return FitConfig(basis=basis, horizon=horizon, rho_init=RhoPair(*rho),
                     shape=InfluenceShape(**shape) if shape else InfluenceShape(), **c)


# ---------------------------------------------------------------------------
# fit outputs
# ---------------------------------------------------------------------------

def write_responsibilities(path, sequences, result):
    r = result.responsibilities.r
    labels = result.labels
    rows = [[s.id] + [repr(float(v)) for v in r[n]] + [int(labels[n])]
            for n, s in enumerate(sequences)]
    header = ["id"] + [f"r_{k + 1}" for k in range(r.shape[1])] + ["label"]
    atomic_write_text(path, _csv_text(header, rows))


def read_responsibilities(path):
    """Return ``(ids, r, labels)``."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        K = len(header) - 2
        ids, r, labels = [], [], []
        for rec in rd:
            ids.append(rec[0])
            r.append([float(v) for v in rec[1:1 + K]])
            labels.append(int(rec[1 + K]))
    return ids, np.asarray(r), np.asarray(labels)


def write_detection(path, sequences, result):
    rows = [[s.id, repr(a), repr(b), repr(w)]
            for s, runs in zip(sequences, result.detected_intervals) for a, b, w in runs]
    atomic_write_text(path, _csv_text(["id", "t_start", "t_end", "min_weight"], rows))


def write_trace(path, result):
    header = ["iteration", "delta", "coverage", "objective", "rho1", "rho2", "strategy"]
    rows = [[getattr(t, h) if h in ("iteration", "strategy") else repr(float(getattr(t, h)))
             for h in header] for t in result.trace]
    atomic_write_text(path, _csv_text(header, rows))
