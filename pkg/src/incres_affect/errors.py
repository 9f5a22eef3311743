"""Exception types raised across the package.

Names follow the failure they describe so callers can catch narrowly.
"""


class AffectError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatch(AffectError, ValueError):
    pass


class KernelTooLarge(AffectError, ValueError):
    pass


class DegenerateBatch(AffectError, ValueError):
    pass


class EmptySequence(AffectError, ValueError):
    pass


class LengthMismatch(AffectError, ValueError):
    pass


class ZeroVariance(AffectError, ValueError):
    """Correlation is undefined because one series is constant."""


class ZeroDenominator(AffectError, ValueError):
    pass


class UnknownVariant(AffectError, ValueError):
    pass


class InvalidOverride(AffectError, ValueError):
    pass


class MissingImage(AffectError, FileNotFoundError):
    pass


class MalformedAnnotation(AffectError, ValueError):
    pass


class LabelOutOfRange(AffectError, ValueError):
    pass


class TooFewSubjects(AffectError, ValueError):
    pass


class EmptyDataset(AffectError, ValueError):
    pass


class DivergedLoss(AffectError, FloatingPointError):
    pass


class MissingGradient(AffectError, ValueError):
    pass


class CorruptCheckpoint(AffectError, ValueError):
    pass


class ArchMismatch(AffectError, ValueError):
    pass


class IoFailure(AffectError, OSError):
    pass
