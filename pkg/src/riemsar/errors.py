"""Exception types shared across the package.

Every error raised by library code derives from :class:`RiemsarError` so
callers can catch the whole family; most also derive from the closest
builtin (ValueError / OSError) to stay friendly to generic handlers.
"""


class RiemsarError(Exception):
    """Base class for all library errors."""


class NotHermitianError(RiemsarError, ValueError):
    """Matrix deviates from Hermitian symmetry beyond tolerance."""


class NotPositiveDefiniteError(RiemsarError, ValueError):
    """Matrix has a non-positive eigenvalue (after the regularization policy)."""


class DimensionMismatchError(RiemsarError, ValueError):
    """Operands have incompatible shapes."""


class ConvergenceFailureError(RiemsarError, RuntimeError):
    """Iterative eigensolver failed to converge."""


class UnsupportedDimError(RiemsarError, ValueError):
    """Operation only defined for a specific matrix dimension."""


class InvalidSpecError(RiemsarError, ValueError):
    """Scene specification violates its invariants."""


class BadMagicError(RiemsarError, OSError):
    """File does not start with the expected magic bytes."""


class TruncatedFileError(RiemsarError, OSError):
    """File payload is shorter than its header declares."""


class ImageTooSmallError(RiemsarError, ValueError):
    """Image has fewer pixels than one segmentation seed."""


class EmptySegmentError(RiemsarError, ValueError):
    """A superpixel has no member pixels (defensive; cannot occur normally)."""


class ReconstructionNotPDError(RiemsarError, ValueError):
    """Weighted atom combination is not positive definite, log undefined."""


class InsufficientLabelsError(RiemsarError, ValueError):
    """A class has fewer labeled pixels than requested dictionary atoms."""


class MissingSegmentError(RiemsarError, ValueError):
    """Segment id present in the map but absent from the feature field."""


class ShapeMismatchError(RiemsarError, ValueError):
    """Tensor shape incompatible with the model layout."""


class EmptyClassError(RiemsarError, ValueError):
    """A class has no labeled pixels."""


class EmptyMatrixError(RiemsarError, ValueError):
    """Confusion matrix contains no evaluated pixels."""


class StageFailureError(RiemsarError, RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
