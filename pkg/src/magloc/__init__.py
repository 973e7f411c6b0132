"""Magnetic-field indoor localization from time-series-to-image encodings.

The pipeline: ingest magnetometer trials and rotate them into the global
frame (:mod:`.ingest`), slice each axis into sliding windows and encode
them as stacked recurrence-plot / Gramian angular field / Markov
transition field images (:mod:`.imaging`), extract magnetic landmarks
from a gridded magnitude map (:mod:`.landmarks`), train a classifier or
position regressors on the stacks (:mod:`.models`, engine in
:mod:`.nn`), compensate per-robot sensor footprints (:mod:`.alignment`),
and validate everything against a synthetic dipole world (:mod:`.synth`)
through the CLI (:mod:`.cli`).

Numeric hot spots run through numba when available; set
``MAGLOC_BACKEND=numpy`` to force the pure-numpy fallbacks (see
:mod:`.backend`).
"""

from .backend import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
