"""Command-line interface: ``robust-tpp {simulate,fit,eval,experiment}``.

Settings come from built-in defaults, then an optional JSON or TOML config
file (flat, or with a section named after the subcommand), then explicit
flags. Every run writes the resolved settings to ``run.json`` in its output
directory.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""
import argparse
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from . import io as rio
from .em import FitConfig, NumericalError, Responsibilities, fit, fit_unweighted
from .eval import (GRADIENT_C, GRADIENT_FAMILIES, L1_SMOOTHER_NOTE, DetectionGroundTruth,
                   gradient_ratio_experiment, l1_errors, purity, tpr_tnr)
from .influence import RhoPair
from .intensity import BasisSpec
from .simulate import benchmark_design
from .weights import write_weight_csv

log = logging.getLogger("robust_tpp")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    """Invalid or inconsistent settings."""


DEFAULTS = {
    "simulate": {
        "design": "nhpp", "L": 2, "eta": 0.2, "type": "i", "seed": 0, "n_per_class": 30,
        "K_true": 4, "out": "data",
    },
    "fit": {
        "events": None, "K": 4, "method": "robust", "H": 6, "basis": "gaussian",
        "trigger_H": None, "trigger_span": None, "epsilon": 0.1, "max_iter": 500,
        "T_switch": 5, "seed": 0, "lr": None, "lr_scale": 1.0, "alpha_tilde": 0.6,
        "coverage_mode": "responsibility", "rho": [1.0, 1.0], "out": "fit",
    },
    "eval": {
        "events": None, "fit_dir": None, "metrics": None, "alpha_tilde": 0.6,
        "l1_alpha": 0.9, "out": None, "emit_plot_data": False,
    },
    "experiment": {
        "table": "purity-nhpp", "repeats": 10, "seed": 0, "out": "experiment",
        "eta_grid": [0.15, 0.2, 0.25], "L_grid": [1, 2, 4], "K_grid": [4, 5, 6],
        "types": ["i", "ii"], "methods": ["robust", "standard"], "H": 6,
        "families": list(GRADIENT_FAMILIES), "c_grid": list(GRADIENT_C), "N": 200,
        "replicates": 50, "workers": None, "emit_plot_data": False,
        "T_switch": 5, "coverage_mode": "responsibility", "epsilon": 0.1, "max_iter": 500,
    },
}

TABLES = ("purity-nhpp", "purity-hawkes", "detection", "gradient-ratio")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def load_config_file(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            return tomllib.loads(text)
        return json.loads(text)
    except Exception as exc:  # parser-specific exception types
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc


def resolve(command, args):
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS[command])
    if args.config:
        raw = load_config_file(args.config)
        section = dict(raw.get(command, {})) if isinstance(raw.get(command), dict) else {}
        flat = {k: v for k, v in raw.items() if not isinstance(v, dict)}
        for key, val in {**flat, **section}.items():
            if key not in cfg:
                raise ConfigError(f"unknown setting {key!r} for {command}")
            cfg[key] = val
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def write_run_json(out, command, cfg):
    payload = {"command": command, "config": cfg, "version": __version__,
               "numba": bool(_kernels.HAVE_NUMBA)}
    rio.atomic_write_text(Path(out) / "run.json", json.dumps(payload, indent=1, default=str))


def _choice(name, value, options):
    if value not in options:
        raise ConfigError(f"{name} must be one of {options}, got {value!r}")
    return value


def _positive_int(name, value):
    if isinstance(value, bool) or int(value) != value or int(value) < 1:
        raise ConfigError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def make_basis(kind, T, H, trigger_H=None, trigger_span=None):
    _choice("basis", kind, ("gaussian", "spline"))
    try:
        if kind == "gaussian":
            return BasisSpec.gaussian(T, H, trigger_H, trigger_span)
        return BasisSpec.spline(T, H, trigger_H, trigger_span)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def worker_count(requested=None):
    """Requested workers capped by ``ROBUST_TPP_THREADS`` and the CPU count."""
    cap = os.environ.get("ROBUST_TPP_THREADS")
    n = int(requested) if requested else (int(cap) if cap else 1)
    if cap:
        n = min(n, int(cap))
    return max(1, min(n, os.cpu_count() or 1))


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(cfg):
    design = _choice("design", cfg["design"], ("nhpp", "hawkes"))
    L = _positive_int("L", cfg["L"])
    eta = float(cfg["eta"])
    if not 0.0 <= eta < 1.0:
        raise ConfigError(f"eta must lie in [0, 1), got {eta}")
    type_ = _choice("type", str(cfg["type"]), ("i", "ii"))
    n_per = _positive_int("n_per_class", cfg["n_per_class"])
    K_true = _positive_int("K_true", cfg["K_true"])
    if K_true > 4:
        raise ConfigError("K_true must be at most 4")
    data = benchmark_design(design, L, eta, type_, K_true, n_per, int(cfg["seed"]))
    out = Path(cfg["out"])
    rio.write_events(out / "events.csv", data.sequences, data.horizon, data.design)
    write_run_json(out, "simulate", cfg)
    print(f"wrote {len(data.sequences)} sequences to {out / 'events.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def fit_config(cfg, horizon):
    basis = make_basis(cfg["basis"], horizon.T, _positive_int("H", cfg["H"]),
                       cfg["trigger_H"], cfg["trigger_span"])
    try:
        return FitConfig(
            K=_positive_int("K", cfg["K"]), basis=basis, horizon=horizon,
            rho_init=RhoPair(*map(float, cfg["rho"])), lr=cfg["lr"],
            lr_scale=float(cfg["lr_scale"]), epsilon=float(cfg["epsilon"]),
            max_iter=_positive_int("max_iter", cfg["max_iter"]),
            T_switch=int(cfg["T_switch"]), seed=int(cfg["seed"]),
            alpha_tilde=float(cfg["alpha_tilde"]), coverage_mode=cfg["coverage_mode"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def run_fit(sequences, fcfg, method):
    _choice("method", method, ("robust", "standard"))
    try:
        fcfg.validate(len(sequences))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    with np.errstate(over="raise", invalid="raise"):
        try:
            return (fit if method == "robust" else fit_unweighted)(sequences, fcfg)
        except FloatingPointError as exc:
            raise NumericalError(str(exc)) from exc


def cmd_fit(cfg):
    if not cfg["events"]:
        raise ConfigError("fit needs --events")
    sequences, horizon = rio.read_events(cfg["events"])
    result = run_fit(sequences, fit_config(cfg, horizon), cfg["method"])
    out = Path(cfg["out"])
    rio.write_model(out / "model.json", result)
    rio.write_responsibilities(out / "responsibilities.csv", sequences, result)
    rio.write_detection(out / "detection.csv", sequences, result)
    rio.write_trace(out / "trace.csv", result)
    write_weight_csv(out / "weights.csv", sequences, result.weight_tables, horizon)
    write_run_json(out, "fit", cfg)
    state = "converged" if result.converged else "stopped at the iteration cap"
    print(f"{cfg['method']} fit {state} after {result.state.iteration} iterations; "
          f"outputs in {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(cfg):
    if not cfg["events"] or not cfg["fit_dir"]:
        raise ConfigError("eval needs --events and --fit-dir")
    sequences, horizon = rio.read_events(cfg["events"])
    fit_dir = Path(cfg["fit_dir"])
    state, basis, _, _ = rio.read_model(fit_dir / "model.json")
    ids, r, labels = rio.read_responsibilities(fit_dir / "responsibilities.csv")
    if ids != [s.id for s in sequences]:
        raise rio.DataError("responsibilities do not match the event file's sequences")
    Responsibilities(r)
    has_labels = all(s.true_label is not None for s in sequences)
    has_windows = any(s.contamination_windows for s in sequences)
    requested = cfg["metrics"]
    if requested is None:
        requested = (["purity"] if has_labels else []) + (["tpr_tnr"] if has_windows else [])
        requested.append("l1")
    elif isinstance(requested, str):
        requested = [m.strip() for m in requested.split(",") if m.strip()]
    for m in requested:
        _choice("metric", m, ("purity", "tpr_tnr", "l1"))
    metrics = {}
    per_seq = {"id": ids}
    if "purity" in requested:
        if not has_labels:
            raise rio.DataError("purity requested but the dataset has no true labels")
        metrics["purity"] = purity(labels, [s.true_label for s in sequences])
    if "tpr_tnr" in requested:
        det = DetectionGroundTruth.from_weight_csv(
            fit_dir / "weights.csv", ids, labels, [s.contamination_windows for s in sequences],
            float(cfg["alpha_tilde"]), horizon.T0)
        rates = tpr_tnr(det)
        metrics.update(mean_tpr=rates["mean_tpr"], mean_tnr=rates["mean_tnr"],
                       alpha_tilde=float(cfg["alpha_tilde"]))
        per_seq.update(tpr=rates["tpr"], tnr=rates["tnr"])
    if "l1" in requested:
        l1 = l1_errors(sequences, state.params, labels, basis, horizon, float(cfg["l1_alpha"]))
        metrics.update(l1_median=l1["median"], l1_q_alpha=l1["q_alpha"],
                       l1_alpha=float(cfg["l1_alpha"]), l1_smoother=L1_SMOOTHER_NOTE)
        per_seq["l1"] = l1["per_sequence"]
    out = Path(cfg["out"] or fit_dir)
    rio.atomic_write_text(out / "metrics.json", json.dumps(metrics, indent=1))
    cols = list(per_seq)
    rows = [[per_seq[c][n] if c == "id" else repr(float(per_seq[c][n])) for c in cols]
            for n in range(len(ids))]
    rio.atomic_write_text(out / "metrics.csv", rio._csv_text(cols, rows))
    if cfg["emit_plot_data"] and "l1" in per_seq:
        ys = np.sort(per_seq["l1"])
        rio.atomic_write_text(out / "plot_data" / "l1_sorted.csv", rio._csv_text(
            ["x", "y"], [[i, repr(float(v))] for i, v in enumerate(ys)]))
    write_run_json(out, "eval", cfg)
    print(json.dumps(metrics, indent=1))
    return EXIT_OK


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------

def _job_seed(master, *key):
    return int(np.random.SeedSequence(int(master), spawn_key=tuple(key)).generate_state(1)[0])


def _sweep_job(job):
    """One dataset: fit every K and method on it. Returns a list of rows."""
    design, eta, L, type_, rep, seed, cfg, table = job
    data = benchmark_design(design, L, eta, type_, seed=seed)
    truth = data.labels
    trig = 6 if design == "hawkes" else None
    rows = []
    methods = ["robust"] if table == "detection" else cfg["methods"]
    for K in cfg["K_grid"]:
        basis = BasisSpec.gaussian(data.horizon.T, cfg["H"], trig)
        fcfg = FitConfig(K=K, basis=basis, horizon=data.horizon, seed=seed,
                         T_switch=cfg["T_switch"], coverage_mode=cfg["coverage_mode"],
                         epsilon=cfg["epsilon"], max_iter=cfg["max_iter"])
        for method in methods:
            res = run_fit(data.sequences, fcfg, method)
            row = {"eta": eta, "L": L, "K": K, "type": type_, "method": method,
                   "repeat": rep, "seed": seed}
            if table == "detection":
                rates = tpr_tnr(DetectionGroundTruth.from_fit(res, data.sequences))
                row.update(tpr=rates["mean_tpr"], tnr=rates["mean_tnr"])
            else:
                row["purity"] = purity(res.labels, truth)
            rows.append(row)
    return rows


def _gradient_job(job):
    family, c, cfg, seed = job
    res = gradient_ratio_experiment(family, c, 0.2, int(cfg["N"]), seed,
                                    int(cfg["replicates"]), H=cfg["H"])
    return [{"family": family, "c": c, "mean": res["mean"], "se": res["se"],
             "replicates": int(cfg["replicates"])}]


def _run_jobs(fn, jobs, workers, cell_dir):
    """Run jobs, write each result atomically, return results in job order."""
    cell_dir.mkdir(parents=True, exist_ok=True)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(fn, jobs))
    else:
        results = [fn(j) for j in jobs]
    for i, rows in enumerate(results):
        rio.atomic_write_text(cell_dir / f"job{i:05d}.json", json.dumps(rows))
    return [row for rows in results for row in rows]


def _mean_se(vals):
    v = np.asarray(vals, dtype=np.float64)
    v = v[~np.isnan(v)]
    if v.size == 0:
        return float("nan"), float("nan")
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
    return float(v.mean()), se


def _summarise(rows, keys, metric):
    groups = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in keys), []).append(row[metric])
    out = []
    for key in sorted(groups, key=lambda k: tuple(str(x) if isinstance(x, str) else x
                                                   for x in k)):
        mean, se = _mean_se(groups[key])
        out.append(dict(zip(keys, key), metric=metric, mean=mean, se=se, n=len(groups[key])))
    return out


def _layout(summary, cfg, row_keys, metric_rows):
    """Wide layout: rows (eta, L, method-or-metric), columns type x K."""
    cols = [(t, K) for t in cfg["types"] for K in cfg["K_grid"]]
    header = ["eta", "L", "row"] + [f"Type-{t} K={K}" for t, K in cols]
    index = {}
    for s in summary:
        index[(s["eta"], s["L"], s[row_keys], s["type"], s["K"])] = s
    lines = []
    for eta in cfg["eta_grid"]:
        for L in cfg["L_grid"]:
            for label in metric_rows:
                cells = []
                for t, K in cols:
                    s = index.get((eta, L, label, t, K))
                    cells.append("" if s is None else f"{s['mean']:.4f} ± {s['se']:.4f}")
                lines.append([eta, L, label] + cells)
    return rio._csv_text(header, lines)


def cmd_experiment(cfg):
    table = _choice("table", cfg["table"], TABLES)
    repeats = _positive_int("repeats", cfg["repeats"])
    out = Path(cfg["out"])
    workers = worker_count(cfg["workers"])
    seed = int(cfg["seed"])
    if table == "gradient-ratio":
        for fam in cfg["families"]:
            _choice("family", fam, GRADIENT_FAMILIES)
        jobs = [(fam, c, cfg, _job_seed(seed, i, j))
                for i, fam in enumerate(cfg["families"]) for j, c in enumerate(cfg["c_grid"])]
        rows = _run_jobs(_gradient_job, jobs, workers, out / "cells" / table)
        header = ["family", "c", "mean", "se", "replicates"]
        rio.atomic_write_text(out / f"{table}.csv", rio._csv_text(
            header, [[r[h] for h in header] for r in rows]))
        if cfg["emit_plot_data"]:
            for fam in cfg["families"]:
                pts = [[r["c"], r["mean"], r["se"]] for r in rows if r["family"] == fam]
                rio.atomic_write_text(out / "plot_data" / f"{table}_{fam}.csv",
                                      rio._csv_text(["x", "y", "se"], pts))
        write_run_json(out, "experiment", cfg)
        print(f"wrote {len(rows)} cells to {out / (table + '.csv')}")
        return EXIT_OK

    design = "hawkes" if table == "purity-hawkes" else "nhpp"
    for t in cfg["types"]:
        _choice("type", t, ("i", "ii"))
    for m in cfg["methods"]:
        _choice("method", m, ("robust", "standard"))
    grid = list(itertools.product(enumerate(cfg["eta_grid"]), enumerate(cfg["L_grid"]),
                                  enumerate(cfg["types"]), range(repeats)))
    jobs = [(design, float(eta), int(L), t, rep, _job_seed(seed, ie, il, it, rep), cfg, table)
            for (ie, eta), (il, L), (it, t), rep in grid]
    rows = _run_jobs(_sweep_job, jobs, workers, out / "cells" / table)
    keys = ["eta", "L", "K", "type", "method"]
    metrics = ["tpr", "tnr"] if table == "detection" else ["purity"]
    summary = [s for m in metrics for s in _summarise(rows, keys, m)]
    header = keys + ["metric", "mean", "se", "n"]
    rio.atomic_write_text(out / f"{table}.csv", rio._csv_text(
        header, [[s[h] for h in header] for s in summary]))
    if table == "detection":
        for s in summary:
            s["row"] = s["metric"].upper()
        layout = _layout(summary, cfg, "row", ["TPR", "TNR"])
    else:
        for s in summary:
            s["row"] = s["method"].capitalize()
        layout = _layout(summary, cfg, "row", [m.capitalize() for m in cfg["methods"]])
    rio.atomic_write_text(out / f"{table}_layout.csv", layout)
    if cfg["emit_plot_data"]:
        series = {}
        for s in summary:
            name = f"{s['metric']}_L{s['L']}_K{s['K']}_type{s['type']}_{s['method']}"
            series.setdefault(name, []).append([s["eta"], s["mean"], s["se"]])
        for name, pts in series.items():
            rio.atomic_write_text(out / "plot_data" / f"{table}_{name}.csv",
                                  rio._csv_text(["x", "y", "se"], sorted(pts)))
    write_run_json(out, "experiment", cfg)
    print(f"wrote {len(summary)} cells to {out / (table + '.csv')}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _floats(text):
    return [float(v) for v in text.split(",")]


def _ints(text):
    return [int(v) for v in text.split(",")]


def _strs(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser():
    p = argparse.ArgumentParser(prog="robust-tpp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON or TOML settings file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("-v", "--verbose", action="store_true")

    s = sub.add_parser("simulate", help="generate a benchmark dataset")
    common(s)
    s.add_argument("--design")
    s.add_argument("--L", type=int)
    s.add_argument("--eta", type=float)
    s.add_argument("--type")
    s.add_argument("--n-per-class", dest="n_per_class", type=int)
    s.add_argument("--K-true", dest="K_true", type=int)

    f = sub.add_parser("fit", help="fit the robust or standard mixture")
    common(f)
    f.add_argument("--events")
    f.add_argument("--K", type=int)
    f.add_argument("--method")
    f.add_argument("--H", type=int)
    f.add_argument("--basis")
    f.add_argument("--trigger-H", dest="trigger_H", type=int)
    f.add_argument("--trigger-span", dest="trigger_span", type=float)
    f.add_argument("--epsilon", type=float)
    f.add_argument("--max-iter", dest="max_iter", type=int)
    f.add_argument("--T-switch", dest="T_switch", type=int)
    f.add_argument("--lr", type=float)
    f.add_argument("--lr-scale", dest="lr_scale", type=float)
    f.add_argument("--alpha-tilde", dest="alpha_tilde", type=float)
    f.add_argument("--coverage-mode", dest="coverage_mode")
    f.add_argument("--rho", type=_floats, help="rho1,rho2")

    e = sub.add_parser("eval", help="metrics for a fitted model")
    common(e)
    e.add_argument("--events")
    e.add_argument("--fit-dir", dest="fit_dir")
    e.add_argument("--metrics", type=_strs, help="comma list of purity,tpr_tnr,l1")
    e.add_argument("--alpha-tilde", dest="alpha_tilde", type=float)
    e.add_argument("--l1-alpha", dest="l1_alpha", type=float)
    e.add_argument("--emit-plot-data", dest="emit_plot_data", action="store_true",
                   default=None)

    x = sub.add_parser("experiment", help="benchmark table sweeps")
    common(x)
    x.add_argument("--table", help=", ".join(TABLES))
    x.add_argument("--repeats", type=int)
    x.add_argument("--eta-grid", dest="eta_grid", type=_floats)
    x.add_argument("--L-grid", dest="L_grid", type=_ints)
    x.add_argument("--K-grid", dest="K_grid", type=_ints)
    x.add_argument("--types", type=_strs)
    x.add_argument("--methods", type=_strs)
    x.add_argument("--families", type=_strs)
    x.add_argument("--c-grid", dest="c_grid", type=_floats)
    x.add_argument("--N", type=int)
    x.add_argument("--replicates", type=int)
    x.add_argument("--workers", type=int)
    x.add_argument("--T-switch", dest="T_switch", type=int)
    x.add_argument("--epsilon", type=float)
    x.add_argument("--max-iter", dest="max_iter", type=int)
    x.add_argument("--coverage-mode", dest="coverage_mode")
    x.add_argument("--emit-plot-data", dest="emit_plot_data", action="store_true",
                   default=None)
    return p


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "eval": cmd_eval,
            "experiment": cmd_experiment}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args.command, args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except rio.DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
