"""Compiled kernels vs the numpy fallback on the shapes the experiments use.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--csv out.csv]

Prints one row per (kernel, shape): best-of-repeat wall time of each
backend, the speedup and the max abs difference between their outputs.
"""

import argparse
import csv
import sys
import time

import numpy as np

from hopfcole import _fallback

try:
    from hopfcole import _ckernels
except ImportError:  # extension not built
    _ckernels = None

# (label, m query points, N atoms, d)
SHAPES = [
    ("identity table", 500, 4, 1),
    ("quadrature d=1", 101, 10000, 1),
    ("quadrature d=2 oracle", 441, 40000, 2),
    ("bifurcation seeds", 4096, 16, 2),
    ("bias grid", 2001, 16, 1),
]


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _cases(rng, m, n, d):
    X = np.ascontiguousarray(rng.uniform(-2, 2, (m, d)))
    Y = np.ascontiguousarray(rng.uniform(-2, 2, (n, d)))
    g = rng.normal(0, 1, n)
    W = np.ascontiguousarray(Y / 2.0)
    b = -g - (Y ** 2).sum(axis=1) / 4.0
    return {
        "hc_batch": lambda mod: mod.hc_batch(X, Y, g, 1.0, 0.1)[0],
        "lse_affine_batch": lambda mod: mod.lse_affine_batch(X, W, b, 0.1)[0],
        "entropy_batch": lambda mod: np.concatenate(
            [a.reshape(-1) for a in mod.entropy_batch(X, Y, g, 1.0, 0.1)]),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--csv", default=None, help="also write the table to this file")
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; only the fallback is available", file=sys.stderr)
        return 1
    rng = np.random.default_rng(args.seed)
    header = ["kernel", "shape", "m", "N", "d", "cython_s", "numpy_s", "speedup", "max_abs_diff"]
    rows = []
    for label, m, n, d in SHAPES:
        for kernel, fn in _cases(rng, m, n, d).items():
            tc, oc = _best(lambda: fn(_ckernels), args.repeat)
            tp, op = _best(lambda: fn(_fallback), args.repeat)
            rows.append([kernel, label, m, n, d, tc, tp, tp / tc, float(np.max(np.abs(oc - op)))])
    print(f"{'kernel':<17} {'shape':<22} {'cython ms':>10} {'numpy ms':>10} {'speedup':>8} {'max diff':>9}")
    for r in rows:
        print(f"{r[0]:<17} {r[1]:<22} {1e3 * r[5]:>10.3f} {1e3 * r[6]:>10.3f} {r[7]:>8.2f} {r[8]:>9.1e}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
