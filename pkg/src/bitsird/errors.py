"""Exception types shared across the package."""


class BitsirdError(Exception):
    """Base class for all package errors."""


class InvalidInputError(BitsirdError):
    """An input value violates a precondition (non-finite, out of domain, ...)."""


class DimensionError(BitsirdError):
    """Shapes or extents are inconsistent with the requested operation."""


class InvalidParameterError(BitsirdError):
    """A scalar parameter is outside its legal range (e.g. k <= 0)."""


class ConfigError(BitsirdError):
    """A run configuration file or NetConfig is invalid."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class FormatError(BitsirdError):
    """A serialized file (checkpoint, PGM) is malformed.

    Carries the byte offset at which parsing failed.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ArchitectureMismatchError(BitsirdError):
    """A checkpoint does not match the model it is being loaded into."""

    def __init__(self, message, tensor_name=None):
        super().__init__(message)
        self.tensor_name = tensor_name


class DivergenceError(BitsirdError):
    """Training produced a non-finite value; names the offending layer."""

    def __init__(self, message, layer_name=None):
        super().__init__(message)
        self.layer_name = layer_name
