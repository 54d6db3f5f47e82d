#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallbacks.

Covers the three hot paths: WENO5 face reconstruction, full-axis flux
assembly, and particle boundary-event resolution, plus an end-to-end
density rhs on the two-mode torus.

Usage:
    python benchmarks/benchmark_kernels.py
    python benchmarks/benchmark_kernels.py --sizes 64 128 256 --output results.json

The numpy fallback is what you get at import time with
HYBRIDFP_DISABLE_NUMBA=1; here both implementations are called directly so
one process can time the pair.
"""

import argparse
import json
import time

import numpy as np

from hybridfp import _kernels
from hybridfp.fv import DensityOperator
from hybridfp.scenarios import builtin_scenario


def _time(fn, *args, repeats=20, warmup=2):
    for _ in range(warmup):
        fn(*args)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def bench_weno(sizes, repeats):
    print("\nWENO5 face reconstruction, (n+6, n) input")
    print(f"{'n':>6} {'numba (ms)':>12} {'numpy (ms)':>12} {'speedup':>9}")
    rows = []
    rng = np.random.default_rng(0)
    for n in sizes:
        ve = rng.standard_normal((n + 6, n))
        t_nb = _time(_kernels._weno5_pair_nb, ve, repeats=repeats)
        t_np = _time(_kernels._weno5_pair_np, ve, repeats=repeats)
        print(f"{n:>6} {t_nb*1e3:>12.3f} {t_np*1e3:>12.3f} {t_np/t_nb:>8.1f}x")
        rows.append({"n": n, "numba_s": t_nb, "numpy_s": t_np})
    return rows


def bench_axis_flux(sizes, repeats):
    print("\naxis flux assembly (upwind WENO5 + central diffusion)")
    print(f"{'n':>6} {'numba (ms)':>12} {'numpy (ms)':>12} {'speedup':>9}")
    rows = []
    rng = np.random.default_rng(1)
    for n in sizes:
        ve = rng.standard_normal((n + 6, n))
        vel = rng.standard_normal((n + 1, n))
        jac = 1.0 + rng.random((n + 1, n))
        ginv = 0.5 + rng.random((n + 1, n))
        args = (ve, vel, jac, ginv, 0.5, 0.01)
        t_nb = _time(_kernels._axis_flux_nb, *args, repeats=repeats)
        t_np = _time(_kernels._axis_flux_np, *args, repeats=repeats)
        print(f"{n:>6} {t_nb*1e3:>12.3f} {t_np*1e3:>12.3f} {t_np/t_nb:>8.1f}x")
        rows.append({"n": n, "numba_s": t_nb, "numpy_s": t_np})
    return rows


def bench_events(sizes, repeats):
    print("\nparticle event resolution (reflect/absorb interval)")
    print(f"{'N':>9} {'numba (ms)':>12} {'numpy (ms)':>12} {'speedup':>9}")
    rows = []
    rng = np.random.default_rng(2)
    ndim = np.array([1], dtype=np.int64)
    lo = np.array([[0.0, 0.0]])
    hi = np.array([[2.0, 1.0]])
    wrap = np.zeros((1, 2), dtype=np.bool_)
    code = np.zeros((1, 2, 2), dtype=np.int64)
    code[0, 0, 0] = _kernels.EVENT_REFLECT
    code[0, 0, 1] = _kernels.EVENT_ABSORB
    tr = np.zeros((1, 2, 2))
    tri = np.zeros((1, 2, 2), dtype=np.int64)
    pull = np.zeros((1, 2, 2))
    for n in sizes:
        N = 1000 * n
        # numpy path is 1000x slower; keep its particle count manageable
        n_np = max(1000, N // 100)

        def run_nb():
            pos = np.zeros((N, 2))
            pos[:, 0] = rng.uniform(-0.5, 2.5, N)
            mode = np.zeros(N, dtype=np.int64)
            alive = np.ones(N, dtype=np.bool_)
            _kernels._resolve_events_nb(pos, mode, alive, ndim, lo, hi, wrap,
                                        code, tri, tr, tr, tr, pull)

        def run_np():
            pos = np.zeros((n_np, 2))
            pos[:, 0] = rng.uniform(-0.5, 2.5, n_np)
            mode = np.zeros(n_np, dtype=np.int64)
            alive = np.ones(n_np, dtype=np.bool_)
            _kernels._resolve_events_np(pos, mode, alive, ndim, lo, hi, wrap,
                                        code, tri, tr, tr, tr, pull)

        t_nb = _time(run_nb, repeats=max(3, repeats // 4))
        t_np = _time(run_np, repeats=3, warmup=1) * (N / n_np)
        print(f"{N:>9} {t_nb*1e3:>12.2f} {t_np*1e3:>12.2f} {t_np/t_nb:>8.1f}x")
        rows.append({"N": N, "numba_s": t_nb, "numpy_est_s": t_np})
    return rows


def bench_torus_rhs(repeats):
    print("\nend-to-end density rhs, two-mode torus 100x100")
    sc = builtin_scenario("torus_two_mode")
    op = DensityOperator(sc.system)
    v = [a.copy() for a in sc.density0.values]
    t = _time(lambda: op.rhs(v), repeats=repeats)
    print(f"  current backend ({_kernels.backend_name()}): {t*1e3:.2f} ms per evaluation")
    return {"backend": _kernels.backend_name(), "seconds": t}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--output", help="write results as JSON")
    args = ap.parse_args()

    if not _kernels.NUMBA_ENABLED:
        print("numba is disabled in this process; only the numpy fallback "
              "will be representative")

    results = {
        "backend": _kernels.backend_name(),
        "weno5": bench_weno(args.sizes, args.repeats),
        "axis_flux": bench_axis_flux(args.sizes, args.repeats),
        "events": bench_events(args.sizes, args.repeats),
        "torus_rhs": bench_torus_rhs(max(5, args.repeats // 2)),
    }
    if args.output:
        with open(args.output, "w") as fh:
            json.dump(results, fh, indent=2)
        print(f"\nresults written to {args.output}")


if __name__ == "__main__":
    main()
