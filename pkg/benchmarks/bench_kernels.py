"""Timing comparison of the compiled and pure-numpy kernel backends.

Usage:  python3 benchmarks/bench_kernels.py [--repeat N]

The backend is fixed at import time by the BATSOPT_NUMBA environment
variable, so this script re-executes itself once per backend in a
subprocess, runs the same workloads in each, and prints one table with
the speedups.  Compilation happens during an untimed warmup pass, so
numba numbers reflect steady state.

Workloads:
    constraint_rows   margin-matrix assembly, 979 grid points x 399 degrees
    lp_solve          design LP for B(8, 0.8) on a 300-point grid
    gf_matmul         GF(256) product of two 256 x 256 matrices
    gf_rank           GF(256) rank of a 192 x 256 matrix
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def _workloads():
    import numpy as np

    from batsopt import backend_name, degopt, gf256
    from batsopt.specfun import (
        FieldParams,
        RankDistribution,
        _constraint_rows_kernel,
        _constraint_rows_numpy,
    )

    # the public constraint_rows caches per grid; time the raw kernel
    rows_kernel = (_constraint_rows_kernel if backend_name() == "numba"
                   else _constraint_rows_numpy)
    rank = RankDistribution.binomial(8, 0.8)
    config = degopt.ProblemConfig(
        rank_dist=rank, field=FieldParams(256), recovery_fraction=0.98,
        grid_step=None, grid_count=300,
    )
    dec = config.decode_probs()
    fine = degopt.build_grid(0.98, step=0.001)
    rng = np.random.default_rng(0)
    A = rng.integers(0, 256, size=(256, 256), dtype=np.uint8)
    B = rng.integers(0, 256, size=(256, 256), dtype=np.uint8)
    C = rng.integers(0, 256, size=(192, 256), dtype=np.uint8)

    return {
        "constraint_rows": lambda: rows_kernel(dec, fine.points, 399),
        "lp_solve": lambda: degopt.optimize_degree(config),
        "gf_matmul": lambda: gf256.matmul(A, B),
        "gf_rank": lambda: gf256.matrix_rank(C),
    }


def run_child(repeat: int) -> None:
    from batsopt import backend_name

    times = {"backend": backend_name()}
    for name, fn in _workloads().items():
        fn()  # warmup; compiles on the numba path
        best = min(_timed(fn) for _ in range(repeat))
        times[name] = best
    json.dump(times, sys.stdout)


def _timed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def run_parent(repeat: int) -> int:
    results = {}
    for flag in ("1", "0"):
        env = dict(os.environ, BATSOPT_NUMBA=flag)
        proc = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--child",
             "--repeat", str(repeat)],
            env=env, capture_output=True, text=True,
        )
        if proc.returncode != 0:
            sys.stderr.write(proc.stderr)
            return 1
        data = json.loads(proc.stdout)
        results[data.pop("backend")] = data

    if set(results) == {"numba", "numpy"}:
        names = list(results["numba"])
        print(f"{'workload':<17} {'numba_s':>10} {'numpy_s':>10} {'speedup':>8}")
        for name in names:
            a, b = results["numba"][name], results["numpy"][name]
            print(f"{name:<17} {a:>10.4f} {b:>10.4f} {b / a:>7.1f}x")
    else:
        # numba unavailable: both children ran the numpy path
        print("numba not importable; numpy-only timings")
        for name, secs in results["numpy"].items():
            print(f"{name:<17} {secs:>10.4f}")
    return 0


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3,
                        help="timed repetitions per workload (best is kept)")
    parser.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.child:
        run_child(args.repeat)
        return 0
    return run_parent(args.repeat)


if __name__ == "__main__":
    sys.exit(main())
