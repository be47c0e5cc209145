"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for an operation."""


class ConfigError(ValueError):
    """A configuration value or combination of values is invalid."""


class ContractError(ValueError):
    """A precondition of an operation was violated by its caller."""


class DomainError(ValueError):
    """A math function was evaluated outside its domain."""


class UndefinedMetricError(ValueError):
    """A metric is not defined for the given records (e.g. single-class AUC)."""


class NonFiniteError(FloatingPointError):
    """Training produced a NaN or infinite value."""


class CheckpointError(ValueError):
    """A checkpoint file is corrupt or does not match the expected model."""
