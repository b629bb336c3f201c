"""Exception types shared across the package.

Every anticipated failure raises a subclass of StratDepthError so callers
(and the CLI) can distinguish data errors from genuine bugs.
"""


class StratDepthError(Exception):
    """Base class for all typed errors raised by this package."""


class ShapeError(StratDepthError):
    """Array dimensions do not match what the operation requires."""


class EmptyMaskError(StratDepthError):
    """No jointly-valid pixels to compute over."""


class EmptyInputError(StratDepthError):
    """An operation requiring a nonempty collection received an empty one."""


class InsufficientDataError(StratDepthError):
    """Fewer samples than mixture components."""


class InvalidFeatureError(StratDepthError):
    """A clustering feature is NaN or infinite."""


class UnsupportedKError(StratDepthError):
    """Difficulty labeling is only defined for three components."""


class DegenerateDisparityError(StratDepthError):
    """Disparity map has zero mean; mean normalization is undefined."""


class RankError(StratDepthError):
    """Adapter rank outside [1, min(d_in, d_out)]."""


class AlignmentError(StratDepthError):
    """Trajectories cannot be associated (length or timestamp mismatch)."""


class DegenerateTrajectoryError(StratDepthError):
    """Too few or collinear points; alignment has no unique solution."""


class FormatError(StratDepthError):
    """File bytes do not conform to the declared format."""


class TruncatedError(FormatError):
    """File ends before the header-declared payload is complete."""


class ManifestError(StratDepthError):
    """Frame manifest is malformed or inconsistent."""
