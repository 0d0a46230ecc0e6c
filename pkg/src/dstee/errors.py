"""Exception types raised across the package."""


class DSTError(Exception):
    """Base class for all package errors."""


class ConfigError(DSTError, ValueError):
    """Invalid configuration or mismatched dimensions."""


class ContractError(DSTError, RuntimeError):
    """A caller violated an operation's precondition."""


class NumericalError(DSTError, FloatingPointError):
    """Non-finite values appeared during a computation."""

    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer


class FormatError(DSTError, ValueError):
    """Malformed input file (IDX dataset or checkpoint)."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
