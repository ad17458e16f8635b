"""Exception types raised by the package."""


class EBFlowError(Exception):
    """Base class for all package errors."""


class NumericalFailure(EBFlowError, ArithmeticError):
    """A numerical routine produced non-finite values or failed to factorize."""


class NonPositiveSigma(NumericalFailure):
    """The reparametrized noise covariance sigma^2 I - tau^2 X X^T is not positive definite."""


class ConfigError(EBFlowError, ValueError):
    """An experiment configuration is malformed."""
