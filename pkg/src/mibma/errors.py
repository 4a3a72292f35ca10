"""Exception types raised across the package."""


class MibmaError(Exception):
    """Base class for all package-specific errors."""


class NotPositiveDefinite(MibmaError):
    """A matrix required to be positive definite failed its Cholesky pivot check."""


class AllZeroMass(MibmaError):
    """Every log-weight in a normalization was -inf."""


class ModelSpaceTooLarge(MibmaError):
    """Exhaustive model enumeration requested beyond the supported size."""


class SingularDesign(MibmaError):
    """The active-column weighted Gram matrix is not positive definite."""


class SingularDispersion(MibmaError):
    """Residual variance collapsed to (numerically) zero in a Gaussian fit."""


class SingularBread(MibmaError):
    """The summed Hessian in the sandwich formula is not invertible."""


class DimensionTooLarge(MibmaError):
    """Tensor-grid quadrature requested in too many dimensions."""


class PreconditionViolated(MibmaError):
    """Inputs violate a documented precondition (e.g. unequal prior products)."""


class ChainStalled(MibmaError):
    """The data-augmentation chain could not produce a usable constrained fit."""


class InsufficientDraws(MibmaError):
    """Rubin pooling needs at least two imputation draws."""


class EmptySample(MibmaError):
    """Poisson sampling selected no units, twice in a row."""
