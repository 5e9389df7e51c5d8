"""Exception types shared across the package."""


class ContractError(ValueError):
    """An input violates an operation's preconditions."""


class IntegrationError(FloatingPointError):
    """The stochastic integrator produced non-finite values."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"integration blew up at step {step}")


class IllConditionedError(ArithmeticError):
    """A covariance matrix could not be factorized."""

    def __init__(self, message, pivot=None):
        self.pivot = pivot
        super().__init__(message)


class FitError(RuntimeError):
    """A model fit or order selection did not produce a usable model."""


class DegenerateStdError(ValueError):
    """A predictive standard deviation is zero where a positive one is required."""
