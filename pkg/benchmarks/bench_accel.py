"""Throughput comparison of the JIT hot kernels against the numpy fallback.

The GP kernels have two importable implementations, timed in-process.  The
cone-solver core is one function whose execution mode is fixed at import by
GPCBF_DISABLE_NUMBA, so the fallback timing comes from re-running this script
in a child process with the flag set.

    python benchmarks/bench_accel.py
"""

import json
import os
import subprocess
import sys
import time

import numpy as np


def _time(fn, *args, repeat=50):
    fn(*args)  # warm-up / JIT compile
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def bench_gp_kernels():
    from gpcbf.gp import (
        BaseKernelParams,
        _cross_kbar_loops,
        _cross_kbar_numpy,
        _gram_composite_loops,
        _gram_composite_numpy,
        _stacked_params,
    )

    rng = np.random.default_rng(0)
    rows = []
    for N in (50, 150, 400):
        n, q = 4, 3
        X = np.ascontiguousarray(rng.normal(size=(N, n)))
        Y = np.ascontiguousarray(rng.normal(size=(N, q)))
        params = [BaseKernelParams(1.0, np.full(n, 2.0)) for _ in range(q)]
        sf2, inv_ell2 = _stacked_params(params, n)
        xstar = np.ascontiguousarray(rng.normal(size=n))
        rows.append(
            (
                f"gram N={N}",
                _time(_gram_composite_loops, X, Y, sf2, inv_ell2, repeat=20),
                _time(_gram_composite_numpy, X, Y, sf2, inv_ell2, repeat=20),
            )
        )
        rows.append(
            (
                f"cross N={N}",
                _time(_cross_kbar_loops, X, Y, xstar, sf2, inv_ell2, repeat=200),
                _time(_cross_kbar_numpy, X, Y, xstar, sf2, inv_ell2, repeat=200),
            )
        )
    return rows


def bench_solver():
    """Mean per-solve time of the cone filter core in the current mode."""
    from gpcbf.socp import SafetyConeData, build_program, solve
    from gpcbf.validate import random_feasible_instance

    rng = np.random.default_rng(1)
    instances = [random_feasible_instance(rng) for _ in range(100)]
    # warm-up (includes JIT compilation in the accelerated mode)
    solve(build_program(instances[0][1], instances[0][0]), tol=1e-9)
    t0 = time.perf_counter()
    for cone, u_nom in instances:
        solve(build_program(u_nom, cone), tol=1e-9)
    return (time.perf_counter() - t0) / len(instances)


def main():
    if "--solver-only" in sys.argv:
        print(json.dumps({"solver_s": bench_solver()}))
        return

    from gpcbf import NUMBA_ENABLED

    if not NUMBA_ENABLED:
        print("run without GPCBF_DISABLE_NUMBA to compare both paths")
        sys.exit(1)

    print(f"{'kernel':<14} {'numba':>12} {'numpy':>12} {'speedup':>9}")
    for name, t_jit, t_np in bench_gp_kernels():
        print(f"{name:<14} {t_jit * 1e3:>10.3f}ms {t_np * 1e3:>10.3f}ms {t_np / t_jit:>8.1f}x")

    t_solver_jit = bench_solver()
    env = dict(os.environ, GPCBF_DISABLE_NUMBA="1")
    child = subprocess.run(
        [sys.executable, os.path.abspath(__file__), "--solver-only"],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    t_solver_np = json.loads(child.stdout)["solver_s"]
    print(
        f"{'socp solve':<14} {t_solver_jit * 1e3:>10.3f}ms {t_solver_np * 1e3:>10.3f}ms "
        f"{t_solver_np / t_solver_jit:>8.1f}x"
    )


if __name__ == "__main__":
    main()
