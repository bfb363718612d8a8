"""Exception hierarchy shared by all crfiqa modules."""


class CRFIQAError(Exception):
    """Base class for every error raised by this package."""


class NormalizationError(CRFIQAError, ValueError):
    """Raised when a zero-norm vector has to be normalized."""


class DimensionError(CRFIQAError, ValueError):
    """Raised on mismatched vector or matrix dimensions."""


class LabelError(CRFIQAError, ValueError):
    """Raised when a class label is outside ``[0, C)``."""


class InsufficientClassesError(CRFIQAError, ValueError):
    """Raised when fewer than two classes are available."""


class DivergenceError(CRFIQAError, RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, iteration, loss):
        self.iteration = iteration
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at iteration {iteration}")


class PairConstructionError(CRFIQAError, ValueError):
    """Raised when the requested number of pairs cannot be drawn."""


class EmptyScoresError(CRFIQAError, ValueError):
    """Raised when a score array is empty."""


class ConfigError(CRFIQAError, ValueError):
    """Raised on invalid or incompatible configuration."""


class InsufficientPointsError(CRFIQAError, ValueError):
    """Raised when a curve has too few points to integrate."""


class DegenerateWeightsError(CRFIQAError, ValueError):
    """Raised when aggregation weights sum to zero."""


class ConstantInputError(CRFIQAError, ValueError):
    """Raised when a rank correlation is requested for a constant input."""


class MissingIdError(CRFIQAError, LookupError):
    """Raised when pair ids do not resolve to known samples."""

    def __init__(self, missing):
        self.missing = sorted(missing, key=str)
        shown = ", ".join(str(m) for m in self.missing[:20])
        more = "" if len(self.missing) <= 20 else f" (+{len(self.missing) - 20} more)"
        super().__init__(f"unknown ids: {shown}{more}")


class DataFormatError(CRFIQAError, ValueError):
    """Raised by the CSV readers; carries the offending position."""

    def __init__(self, path, line, column, message):
        self.path = path
        self.line = line
        self.column = column
        super().__init__(f"{path}:{line}:{column}: {message}")
