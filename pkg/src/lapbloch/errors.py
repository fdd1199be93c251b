"""Exception types shared across the package."""


class LapBlochError(Exception):
    """Base class for all package errors."""


class ConfigError(LapBlochError):
    """Invalid user input (files, parameters, schema violations)."""


class NumericalError(LapBlochError):
    """A numerical procedure could not deliver a trustworthy result."""


class DomainError(NumericalError, ValueError):
    """Argument outside the domain of an operation."""


class InvalidDirectionError(DomainError):
    pass


class PoleProximityError(NumericalError):
    """Linear cell system is (numerically) singular at the given quasi-momentum."""

    def __init__(self, message, alpha=None, margin=None):
        super().__init__(message)
        self.alpha = alpha
        self.margin = margin


class DegenerateBandError(NumericalError):
    """Operation needs a simple eigenvalue but the band is degenerate."""


class CrossingAmbiguityError(NumericalError):
    def __init__(self, message, s=None):
        super().__init__(message)
        self.s = s


class IrregularLevelError(NumericalError):
    """The spectral parameter violates the regularity assumptions."""


class HigherOrderDegeneracyError(IrregularLevelError):
    """Degenerate point whose second directional derivative vanishes."""


class BranchContinuationError(NumericalError):
    pass


class ContourConstructionError(NumericalError):
    def __init__(self, message, alpha=None, margin=None):
        super().__init__(message)
        self.alpha = alpha
        self.margin = margin
