"""Compare the jitted kernels against their plain-Python bodies.

Usage: python benchmarks/bench_kernels.py [--steps N]

Both paths run the same function; the Python path is reached through numba's
``py_func`` so no second process is needed. Set TANGLEPROOF_NO_JIT=1 to make
the whole package use the Python path.
"""

import argparse
import time
from contextlib import contextmanager

import numpy as np

from tangleproof import kernels, reference_params, run
from tangleproof._jit import backend


@contextmanager
def python_kernels():
    names = ("step_kernel", "reached_by", "root_distance", "full_mask", "_category", "_member")
    saved = {n: getattr(kernels, n) for n in names}
    try:
        for n, fn in saved.items():
            setattr(kernels, n, getattr(fn, "py_func", fn))
        yield
    finally:
        for n, fn in saved.items():
            setattr(kernels, n, fn)


def timed(fn, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=20_000)
    args = ap.parse_args()
    params = reference_params()
    T = args.steps
    run(params, 1, 100)  # compile / load cache

    t_jit, fast = timed(lambda: run(params, 1, T))
    with python_kernels():
        t_py, slow = timed(lambda: run(params, 1, T), repeat=1)
    assert np.array_equal(fast.parents, slow.parents) and np.array_equal(fast.F, slow.F)

    markers = np.arange(T - 50, T + 1, dtype=np.int64)
    r_jit, m1 = timed(lambda: kernels.reached_by(fast.parents, fast.npar, T, markers))
    with python_kernels():
        r_py, m2 = timed(lambda: kernels.reached_by(fast.parents, fast.npar, T, markers), repeat=1)
    assert np.array_equal(m1, m2)

    print(f"backend: {backend()}, steps: {T}")
    print(f"{'kernel':<14}{'jit [s]':>10}{'python [s]':>12}{'speedup':>10}")
    for name, a, b in (("step_kernel", t_jit, t_py), ("reached_by", r_jit, r_py)):
        print(f"{name:<14}{a:>10.4f}{b:>12.4f}{b / a:>10.1f}")


if __name__ == "__main__":
    main()
