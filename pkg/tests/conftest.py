"""Shared test helpers: finite-difference harness and tiny data builders."""

import numpy as np
import pytest

from magloc.ingest import Trial


def finite_diff_grad(fn, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of one array.

    ``x`` is perturbed in place and restored, so ``fn`` may either use its
    argument or close over ``x`` (needed when checking layer parameters that
    live inside an object).
    """
    assert x.dtype == np.float64
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        keep = x[idx]
        x[idx] = keep + eps
        hi = fn(x)
        x[idx] = keep - eps
        lo = fn(x)
        x[idx] = keep
        g[idx] = (hi - lo) / (2.0 * eps)
        it.iternext()
    return g


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.maximum(1e-6, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / scale))


def make_trial(trial_id="t0", n=100, rate=10.0, seed=0, with_pos=True,
               with_angles=False, frame="global") -> Trial:
    rng = np.random.default_rng(seed)
    t = np.arange(n) / rate
    m = rng.normal(0.0, 20.0, size=(n, 3))
    pos = None
    if with_pos:
        pos = np.column_stack([np.linspace(0.0, n / rate, n), np.zeros(n)])
    angles = None
    if with_angles:
        angles = rng.uniform(-0.5, 0.5, size=(n, 3))
    return Trial(id=trial_id, t=t, m=m, angles=angles, pos=pos,
                 rate=rate, frame=frame)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
