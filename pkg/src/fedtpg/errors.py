"""Exception taxonomy shared across the simulator."""


class FedTPGError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(FedTPGError):
    """Operand dimensions are incompatible; message names both shapes."""


class ParameterError(FedTPGError):
    """A scalar argument is outside its valid range (scale, eps, lr, ...)."""


class ConfigError(FedTPGError):
    """Invalid or inconsistent configuration."""


class DataError(FedTPGError):
    """Labels, shards or example sets violate a data precondition."""


class DegenerateInputError(FedTPGError):
    """Numerically degenerate input (e.g. a zero-norm embedding row)."""


class NumericError(FedTPGError):
    """A computation produced a non-finite value."""


class StoreFormatError(FedTPGError):
    """An embedding-store or snapshot file has a bad magic/version/layout."""


class StoreIOError(FedTPGError):
    """Truncated or unreadable binary file; message carries the byte offset."""
