"""Exception hierarchy shared by every module in the package."""


class BBCError(Exception):
    """Base class for all package errors."""


class DimensionError(BBCError, ValueError):
    """Shapes of the operands do not line up."""


class ContractError(BBCError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(BBCError, ValueError):
    """A configuration value or file is invalid."""


class NumericError(BBCError, ArithmeticError):
    """A computation produced NaN or Inf."""


class SamplerError(NumericError):
    """An MCMC chain produced or received non-finite values."""


class EnergyDivergence(NumericError):
    """Energy magnitude blew past the divergence threshold during training."""
