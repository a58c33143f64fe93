"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: configuration problems
exit 2, numerical failures exit 3, property/threshold violations exit 1.
"""


class SetMatchError(Exception):
    """Base class for all package errors."""


class ShapeError(SetMatchError):
    """Operand shapes are incompatible. Carries both shapes."""

    def __init__(self, message, shape_a=None, shape_b=None):
        super().__init__(message)
        self.shape_a = shape_a
        self.shape_b = shape_b


class ConfigurationError(SetMatchError):
    """A configuration value is out of its legal range or unknown."""


class PreconditionError(SetMatchError):
    """An operation was called on inputs that violate its preconditions."""


class OracleError(SetMatchError):
    """The finite-difference oracle hit a non-finite function evaluation."""


class OptimizerError(SetMatchError):
    """Parameter/gradient/velocity shapes disagree during an update."""


class NonFiniteLossError(SetMatchError):
    """Training produced a NaN/Inf loss. Carries the offending batch index."""

    def __init__(self, message, batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index
