"""Time the compiled kernels against the pure-Python fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel runs on both backends with identical inputs; the table shows
the best-of-``repeat`` wall time and the speed-up of the compiled path.
"""
from __future__ import annotations

import argparse
import json
import sys
import timeit

from sscn import kernels
from sscn.numerics import make_rng


def cases(rng):
    k, q, n = 10, 4, 20000
    h = rng.standard_normal((k * q, n))
    targets = rng.integers(0, k, n)
    pts = rng.standard_normal((20000, 10))
    ctr = rng.standard_normal((10, 10))
    cost = rng.random((200, 200))
    a, b = rng.integers(0, 10, 100000), rng.integers(0, 10, 100000)
    return {
        "projection_distances (40 x 20000)": lambda impl: kernels.projection_distances(h, k, q, impl),
        "softmin_xent (40 x 20000)": lambda impl: kernels.softmin_xent(h, targets, k, q, impl),
        "lloyd_assign (20000 pts, 10 centers)": lambda impl: kernels.lloyd_assign(pts, ctr, impl),
        "hungarian (200 x 200)": lambda impl: kernels.hungarian(cost, impl),
        "contingency (100000 labels)": lambda impl: kernels.contingency(a, b, 10, 10, impl),
    }


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", help="also write results to this file")
    args = p.parse_args(argv)
    if "cython" not in kernels.BACKENDS:
        print("compiled extension not built; only the Python backend is available",
              file=sys.stderr)
    rows = []
    for name, fn in cases(make_rng(0)).items():
        row = {"kernel": name}
        for backend, impl in kernels.BACKENDS.items():
            fn(impl)  # warm-up
            row[backend] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat))
        if "cython" in row:
            row["speedup"] = row["python"] / row["cython"]
        rows.append(row)
    width = max(len(r["kernel"]) for r in rows)
    print(f"{'kernel':<{width}}  {'python ms':>10}  {'cython ms':>10}  {'speed-up':>8}")
    for r in rows:
        cy = f"{1e3 * r['cython']:10.3f}" if "cython" in r else f"{'-':>10}"
        sp = f"{r['speedup']:8.1f}" if "speedup" in r else f"{'-':>8}"
        print(f"{r['kernel']:<{width}}  {1e3 * r['python']:10.3f}  {cy}  {sp}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
