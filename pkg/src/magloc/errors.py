"""Exception hierarchy.

The CLI maps these onto exit codes: ConfigError -> 1, DataError subclasses
-> 2, NumericalError subclasses -> 3.
"""


class MaglocError(Exception):
    """Base class for all package errors."""


class ConfigError(MaglocError):
    """Invalid configuration file, key, or option combination."""


class DataError(MaglocError):
    """Problem with input data."""


class ParseError(DataError):
    """Malformed input file; carries file path and line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class EmptyTrialError(DataError):
    """A sensor stream or trial contains no usable samples."""


class SyncError(DataError):
    """Streams cannot be synchronized (e.g. disjoint time ranges)."""


class AlignmentError(DataError):
    """Window sequences or streams that must be aligned are not."""


class EmptyMapError(DataError):
    """Magnetic map construction got no positioned samples."""


class SelectionError(DataError):
    """Landmark selection left zero landmarks."""


class AlignmentSetError(DataError):
    """Pairing produced zero alignment pairs."""


class EvalError(DataError):
    """Prediction/ground-truth mismatch during evaluation."""


class NumericalError(MaglocError):
    """Numerical failure (divergence, degenerate geometry)."""


class ShapeError(NumericalError):
    """Tensor shape mismatch; names the offending layer or array."""


class RankError(NumericalError):
    """Degenerate (rank-deficient) input to a fit."""


class TrainingError(NumericalError):
    """Training cannot proceed or diverged."""


class InferenceError(NumericalError):
    """Inference preconditions not met."""


class SingularFieldError(NumericalError):
    """Field evaluation requested exactly at a source singularity."""
