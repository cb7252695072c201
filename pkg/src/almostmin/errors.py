"""Exception types shared across the package."""


class DomainError(ValueError):
    """A point or ball falls outside the grid cube."""


class ResolutionError(ValueError):
    """A requested radius or ladder is below the grid resolution floor."""


class ValidationError(ValueError):
    """Invalid parameters (non-unit vectors, bad exponents, ...)."""


class DegenerateFitError(ValueError):
    """Fit undefined because the input carries no signal."""


class PreconditionError(ValueError):
    """An analysis was requested at a point that does not qualify."""


class ConeViolationError(ValueError):
    """Free-boundary points are not a graph over the tangent plane."""


class NonConvergenceError(RuntimeError):
    """Iteration budget exhausted; carries the last iterate and history."""

    def __init__(self, message, iterate=None, history=None):
        super().__init__(message)
        self.iterate = iterate
        self.history = history


class PicardDivergenceError(RuntimeError):
    """Drift iteration is growing; a smaller drift is needed."""
