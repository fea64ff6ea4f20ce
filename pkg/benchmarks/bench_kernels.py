"""Time the numba kernels against their pure-numpy counterparts.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Both paths are importable in one process when numba is available; the
benchmark calls each on identical inputs, checks they agree and reports
the best-of-``repeat`` wall time.
"""
import argparse
import json
import time

import numpy as np

from robust_tpp import _kernels


def best_time(fn, args, repeat):
    fn(*args)  # warm-up (and JIT compilation for numba)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    for n in (1_000, 100_000):
        yield f"reflect n={n}", "reflect", (rng.uniform(-1.0, 0.0, n),)
    centers = np.linspace(4.0, 24.0, 6)
    for m in (100, 800):
        times = np.sort(rng.uniform(0.0, 48.0, m))
        yield f"hawkes_features M={m}", "hawkes_features", (times, 48.0, centers, 4.0, 44.0)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", help="write results to this file")
    args = p.parse_args(argv)
    rng = np.random.default_rng(0)
    rows = []
    for label, name, inputs in cases(rng):
        np_fn = getattr(_kernels, f"{name}_numpy")
        nb_fn = getattr(_kernels, f"{name}_numba")
        t_np = best_time(np_fn, inputs, args.repeat)
        row = {"case": label, "numpy_s": t_np, "numba_s": None, "speedup": None}
        if nb_fn is not None:
            t_nb = best_time(nb_fn, inputs, args.repeat)
            a, b = np_fn(*inputs), nb_fn(*inputs)
            pairs = zip(a, b) if isinstance(a, tuple) else [(a, b)]
            agree = all(np.allclose(x, y, rtol=1e-9, atol=1e-12) for x, y in pairs)
            row.update(numba_s=t_nb, speedup=t_np / t_nb, agree=bool(agree))
        rows.append(row)
        nb = "n/a" if row["numba_s"] is None else f"{row['numba_s'] * 1e3:9.3f} ms"
        sp = "" if row["speedup"] is None else f"  x{row['speedup']:.1f}"
        print(f"{label:24s} numpy {t_np * 1e3:9.3f} ms   numba {nb}{sp}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
