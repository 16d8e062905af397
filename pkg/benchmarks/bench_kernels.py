#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy reference.

Times the two hot kernels (backward transition sweep, box-QP inner solve)
and one end-to-end coupled iteration on the packaged 33-bus study, under
both backends. Run from the repository root:

    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time
from pathlib import Path

import numpy as np

from flexdispatch._kernels import pure

try:
    from flexdispatch._kernels import _core
except ImportError:
    _core = None

DATA = Path(__file__).resolve().parents[1] / "src" / "flexdispatch" / "data"


def timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_backward(mod, n, T, repeat):
    rng = np.random.default_rng(0)
    u = rng.uniform(-1, 1, (T, n))
    pbar = rng.uniform(0.05, 1, (n, n))
    pbar /= pbar.sum(axis=0)
    gamma = np.where(rng.random((T, n, n)) < 0.5, 1.0, 10.0)  # forces root-finding
    return timeit(lambda: mod.kl_backward(u, pbar, gamma), repeat)


def bench_boxqp(mod, n, rows, repeat):
    rng = np.random.default_rng(1)
    A = rng.normal(size=(n, n))
    H = A @ A.T / n + 0.01 * np.eye(n)
    g = rng.normal(size=n)
    lo, hi = -np.ones(n), np.ones(n)
    C = rng.normal(size=(rows, n)) / np.sqrt(n)
    d = np.zeros(rows)
    cl, cu = -2.0 * np.ones(rows), 2.0 * np.ones(rows)
    lip = (np.linalg.eigvalsh(H).max() + 10.0 * np.linalg.eigvalsh(C.T @ C).max()) * 1.01
    x0 = np.zeros(n)
    return timeit(lambda: mod.boxqp_pen(H, g, lo, hi, C, d, cl, cu, 10.0, lip,
                                        x0, 1e-9, 200000), repeat)


def bench_coupled(backend_mod, repeat):
    import flexdispatch._kernels as K
    from flexdispatch import load_scenario, parse_matpower
    from flexdispatch.coordinator import Coordinator

    model = parse_matpower((DATA / "case33bw.m").read_text())
    scenario = load_scenario((DATA / "scenario33_nonuniform.cfg").read_text(), model)
    saved = (K.kl_backward, K.backward_column, K.boxqp_pen)
    K.kl_backward = backend_mod.kl_backward
    K.backward_column = backend_mod.backward_column
    K.boxqp_pen = backend_mod.boxqp_pen
    try:
        def one_iteration():
            coord = Coordinator(model, scenario)
            state = coord.initial_state()
            coord.std2_iterate(state)
            coord.std2_iterate(state)
        return timeit(one_iteration, repeat)
    finally:
        K.kl_backward, K.backward_column, K.boxqp_pen = saved


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    backends = [("python", pure)]
    if _core is not None:
        backends.append(("compiled", _core))
    else:
        print("compiled extension not built; benchmarking the fallback only\n")

    cases = [
        ("backward sweep 8 states x 20 steps", lambda m: bench_backward(m, 8, 20, args.repeat)),
        ("backward sweep 32 states x 96 steps", lambda m: bench_backward(m, 32, 96, args.repeat)),
        ("box QP 16 vars, 32 penalty rows", lambda m: bench_boxqp(m, 16, 32, args.repeat)),
        ("box QP 96 vars, 128 penalty rows", lambda m: bench_boxqp(m, 96, 128, args.repeat)),
        ("two coupled iterations, 33-bus study", lambda m: bench_coupled(m, max(2, args.repeat // 2))),
    ]

    width = max(len(name) for name, _ in cases)
    header = f"{'kernel':<{width}}" + "".join(f"{name:>14}" for name, _ in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, bench in cases:
        times = [bench(mod) for _, mod in backends]
        row = f"{name:<{width}}" + "".join(f"{t * 1e3:>11.2f} ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
