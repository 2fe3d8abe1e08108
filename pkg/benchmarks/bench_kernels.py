"""Time the compiled im2col/col2im against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from netgrow import _kernels_py, kernels

SHAPES = [
    # (n, C, H, W, d, pad)
    (8, 3, 32, 32, 3, 1),
    (32, 16, 16, 16, 3, 1),
    (64, 32, 8, 8, 3, 0),
    (16, 8, 28, 28, 5, 2),
]


def bench(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    try:
        from netgrow import _kernels as compiled
    except ImportError:
        compiled = None
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'shape':<28}{'op':<8}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}")
    rng = np.random.default_rng(0)
    for n, C, H, W, d, pad in SHAPES:
        x = rng.standard_normal((n, C, H, W))
        cols = _kernels_py.im2col(x, d, pad)
        g = rng.standard_normal(cols.shape)
        cases = [
            ("im2col", lambda: _kernels_py.im2col(x, d, pad),
             compiled and (lambda: compiled.im2col(x, d, pad))),
            ("col2im", lambda: _kernels_py.col2im(g, x.shape, d, pad),
             compiled and (lambda: compiled.col2im(g, x.shape, d, pad))),
        ]
        label = f"{(n, C, H, W)} d={d} p={pad}"
        for op, py_fn, c_fn in cases:
            t_py = bench(py_fn, args.repeat) * 1e3
            if c_fn:
                t_c = bench(c_fn, args.repeat) * 1e3
                print(f"{label:<28}{op:<8}{t_py:>10.3f}{t_c:>11.3f}{t_py / t_c:>8.2f}x")
            else:
                print(f"{label:<28}{op:<8}{t_py:>10.3f}{'n/a':>11}{'':>9}")


if __name__ == "__main__":
    main()
