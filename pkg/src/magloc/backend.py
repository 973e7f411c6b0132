"""Numba/numpy backend selection for the hot numeric kernels.

The package's inner loops (pairwise distances, bilinear resize, conv2d and
max-pool forward/backward) exist in two variants: a numba ``@njit`` version
and a pure-numpy one. The active variant is chosen once at import time from
the ``MAGLOC_BACKEND`` environment variable:

    MAGLOC_BACKEND=numba   force the jit kernels (error if numba is missing)
    MAGLOC_BACKEND=numpy   force the pure-numpy fallbacks
    unset                  numba when importable, numpy otherwise

Both variants are always importable (``magloc.bench`` times them against
each other), only the default dispatch changes.
"""

import os

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        """Decorator stub so jit kernel definitions still import."""
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


_requested = os.environ.get("MAGLOC_BACKEND", "").strip().lower()
if _requested == "numpy":
    USE_NUMBA = False
elif _requested == "numba":
    if not HAVE_NUMBA:
        raise ImportError("MAGLOC_BACKEND=numba but numba is not importable")
    USE_NUMBA = True
elif _requested == "":
    USE_NUMBA = HAVE_NUMBA
else:
    raise ValueError(f"MAGLOC_BACKEND must be 'numba' or 'numpy', got {_requested!r}")


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


def select(jit_fn, numpy_fn):
    """Pick the active kernel implementation for this process."""
    return jit_fn if USE_NUMBA else numpy_fn
