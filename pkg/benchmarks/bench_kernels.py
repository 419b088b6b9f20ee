"""Compare the numba and numpy roofline backends.

Times the raw kernels on random cost matrices and a full DeepSeek-R1 decode
grid. Run: ``python benchmarks/bench_kernels.py [--points N] [--repeat R]``.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from servesim import _kernels
from servesim.engine import evaluate_grid
from servesim.hw import nvlink_system
from servesim.model import DEEPSEEK_R1
from servesim.parallel import default_plan


def bench(fn, repeat: int) -> float:
    fn()  # warm up, includes jit compilation
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=200_000, help="grid points per matrix")
    ap.add_argument("--layers", type=int, default=40)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    f = rng.random((args.layers, args.points)) * 1e12
    b = rng.random((args.layers, args.points)) * 1e9
    m = rng.integers(1, 62, args.layers).astype(float)
    plan = default_plan(DEEPSEEK_R1, nvlink_system(32))
    B = np.arange(1, args.points + 1)

    print(f"{'backend':8s} {'total(s)':>10s} {'times(s)':>10s} {'grid(s)':>10s}")
    for name in _kernels.available_backends():
        _kernels.set_backend(name)
        t_total = bench(lambda: _kernels.roofline_total(f, b, m, 2.25e15, 8e12), args.repeat)
        t_times = bench(lambda: _kernels.roofline_times(f, b, 2.25e15, 8e12), args.repeat)
        t_grid = bench(lambda: evaluate_grid(DEEPSEEK_R1, plan, B, 4096), args.repeat)
        print(f"{name:8s} {t_total:10.4f} {t_times:10.4f} {t_grid:10.4f}")


if __name__ == "__main__":
    main()
