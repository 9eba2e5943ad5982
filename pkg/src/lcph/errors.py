"""Exception hierarchy for fitting failures.

All fitting-related errors derive from :class:`FitError` so that replicate
runners and cross-validation loops can catch one type when deciding to skip
a failed fit.
"""

from __future__ import annotations

__all__ = [
    "FitError",
    "SeparationError",
    "SingularMatrixError",
    "ConvergenceError",
    "MonotonicityError",
    "DegenerateModelError",
]


class FitError(Exception):
    """Base class for model fitting failures.

    Parameters
    ----------
    message : str
    iterations : int, optional
        Solver iteration count at failure, when meaningful.
    """

    def __init__(self, message: str, iterations: int | None = None):
        super().__init__(message)
        self.iterations = iterations
        self.em_iteration: int | None = None


class SeparationError(FitError):
    """Membership solver diverged: the weighted classes are separable."""


class SingularMatrixError(FitError):
    """A Hessian, information or outer-product matrix is not invertible."""


class ConvergenceError(FitError):
    """An iterative solver exhausted its iteration or step-halving budget."""


class MonotonicityError(FitError):
    """Observed-data log-likelihood decreased between EM iterations."""


class DegenerateModelError(FitError):
    """All class densities vanished for some subject (degenerate baseline)."""
