"""Timing comparison of the jitted kernels against their numpy fallbacks.

Runs both implementations of each hot kernel on representative shapes and
prints a table. The jit functions are numba dispatchers compiled on first
call; compile time is excluded by a warmup invocation. Without numba
installed only the numpy column is reported.
"""

from __future__ import annotations

import time

import numpy as np

from . import backend
from .imaging import _pairwise_jit, _pairwise_numpy, _resize_jit, _resize_numpy
from .nn.kernels import (_conv2d_backward_jit, _conv2d_backward_numpy,
                         _conv2d_forward_jit, _conv2d_forward_numpy,
                         _maxpool_forward_jit, _maxpool_forward_numpy)


def _time(fn, args, repeats: int = 5) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(repeats: int = 5, seed: int = 0) -> list[dict]:
    rng = np.random.default_rng(seed)
    seg = rng.normal(size=70)
    img = rng.normal(size=(70, 70))
    x = rng.normal(size=(32, 12, 32, 32))
    w = rng.normal(size=(32, 12, 3, 3)) * 0.1
    b = np.zeros(32)
    dout = rng.normal(size=(32, 32, 30, 30))
    pool_in = rng.normal(size=(32, 32, 30, 30))

    cases = [
        ("pairwise canberra 70", _pairwise_numpy, _pairwise_jit, (seg, 1)),
        ("resize 70->32", _resize_numpy, _resize_jit, (img, 32)),
        ("conv2d fwd 32x12x32x32", _conv2d_forward_numpy, _conv2d_forward_jit,
         (x, w, b, 1)),
        ("conv2d bwd 32x12x32x32", _conv2d_backward_numpy, _conv2d_backward_jit,
         (x, w, dout, 1)),
        ("maxpool fwd 32x32x30x30", _maxpool_forward_numpy, _maxpool_forward_jit,
         (pool_in, 2)),
    ]
    rows = []
    for name, np_fn, jit_fn, args in cases:
        row = {"kernel": name, "numpy_ms": _time(np_fn, args, repeats) * 1e3}
        if backend.HAVE_NUMBA:
            jit_fn(*args)  # compile outside the timed region
            row["numba_ms"] = _time(jit_fn, args, repeats) * 1e3
            row["speedup"] = row["numpy_ms"] / row["numba_ms"]
        rows.append(row)
    return rows


def format_table(rows: list[dict]) -> str:
    lines = [f"active backend: {backend.backend_name()}"]
    header = f"{'kernel':<26} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}"
    lines.append(header)
    lines.append("-" * len(header))
    for r in rows:
        if "numba_ms" in r:
            lines.append(f"{r['kernel']:<26} {r['numpy_ms']:>10.3f} "
                         f"{r['numba_ms']:>10.3f} {r['speedup']:>7.2f}x")
        else:
            lines.append(f"{r['kernel']:<26} {r['numpy_ms']:>10.3f} "
                         f"{'n/a':>10} {'n/a':>8}")
    return "\n".join(lines)


def main(repeats: int = 5) -> int:
    print(format_table(bench_kernels(repeats=repeats)))
    return 0
