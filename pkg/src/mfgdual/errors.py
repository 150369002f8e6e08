"""Exception types shared across the package."""


class MFGDualError(Exception):
    """Base class for package errors."""


class ProblemError(MFGDualError):
    """Problem data violates a structural assumption."""


class StaggeringError(MFGDualError):
    """A field with the wrong staggering tag was passed to an operator."""


class ShapeError(MFGDualError):
    """Field values do not match the grid layout."""


class ProxError(MFGDualError):
    """A pointwise proximal solve failed to converge."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class DivergenceError(MFGDualError):
    """The saddle-point iteration diverged (step sizes too large)."""


class CFLError(MFGDualError):
    """Backward sweep rejected: time step too large for the viscosity."""

    def __init__(self, message, suggested_n_t=None):
        super().__init__(message)
        self.suggested_n_t = suggested_n_t


class ParseError(MFGDualError):
    """Problem or config file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
