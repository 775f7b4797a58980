"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--csv out.csv]
"""
from __future__ import annotations

import argparse
import csv
import sys
import timeit

import numpy as np

from mfsl import _kernels_py as python_backend
from mfsl import kernels


def workloads(rng):
    """Shapes match the training batches: 8 samples on 32 cells, 32x64 phase space."""
    return {
        "weno5_faces": (rng.random((64, 256)),),
        "sl_fluxes": (rng.random((64, 256)), rng.uniform(-2.4, 2.4, (64, 256))),
        "stencil_apply_1d": (rng.random((8, 32)), rng.standard_normal((8, 5, 32))),
        "stencil_adjoint_1d": (rng.random((8, 32)), rng.standard_normal((8, 5, 32)),
                               rng.standard_normal((8, 32))),
        "column_sums_1d": (rng.standard_normal((8, 5, 32)),),
        "stencil_apply_2d": (rng.random((8, 32, 64)), rng.standard_normal((8, 25, 32, 64))),
        "stencil_adjoint_2d": (rng.random((8, 32, 64)), rng.standard_normal((8, 25, 32, 64)),
                               rng.standard_normal((8, 32, 64))),
        "column_sums_2d": (rng.standard_normal((8, 25, 32, 64)),),
        "spread_2d": (rng.standard_normal((8, 32, 64)), 5),
        "im2col_1d": (rng.random((8, 32, 32)), 5),
        "im2col_2d": (rng.random((8, 32, 64, 32)), 5),
    }


def best_time(fn, args, repeat: int) -> float:
    timer = timeit.Timer(lambda: fn(*args))
    n, _ = timer.autorange()
    return min(timer.repeat(repeat, n)) / n


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--csv")
    args = ap.parse_args(argv)
    if kernels.compiled_backend is None:
        print("compiled extension not importable; only the numpy fallback is available",
              file=sys.stderr)
        return 1
    rows = []
    for name, a in workloads(np.random.default_rng(0)).items():
        tc = best_time(getattr(kernels.compiled_backend, name), a, args.repeat)
        tp = best_time(getattr(python_backend, name), a, args.repeat)
        rows.append((name, tc, tp, tp / tc))
    print(f"{'kernel':<20} {'compiled':>12} {'python':>12} {'speedup':>8}")
    for name, tc, tp, r in rows:
        print(f"{name:<20} {tc * 1e6:>10.1f}us {tp * 1e6:>10.1f}us {r:>8.2f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kernel", "compiled_s", "python_s", "speedup"])
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
