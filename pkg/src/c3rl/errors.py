"""Exception types raised across the package."""


class C3RLError(Exception):
    """Base class for all package errors."""


class DimensionError(C3RLError, ValueError):
    """Operand shapes do not conform."""


class RankError(DimensionError):
    pass


class AxisError(C3RLError, IndexError):
    pass


class ContractError(C3RLError, RuntimeError):
    """A documented precondition was violated by the caller."""


class ConfigError(C3RLError, ValueError):
    """Invalid model or experiment configuration."""


class DataError(C3RLError, ValueError):
    """Unreadable, malformed, or too-short input data."""


class CapabilityError(C3RLError, NotImplementedError):
    """Requested backbone or feature is not supported."""


class NumericError(C3RLError, FloatingPointError):
    """A loss or gradient became non-finite during training."""
