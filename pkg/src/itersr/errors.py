"""Exception types shared across the package."""


class ItersrError(Exception):
    """Base class for all package errors."""


class ShapeError(ItersrError, ValueError):
    """Tensor or kernel dimensions do not match an operation's contract."""


class InvalidSpecError(ItersrError, ValueError):
    """A layer/operator specification is malformed (stride, kernel, range)."""


class StateError(ItersrError, RuntimeError):
    """An object is used in a state its contract forbids."""


class DataError(ItersrError, ValueError):
    """Input data violates a size/format precondition."""


class ImageFormatError(ItersrError, IOError):
    """An image file cannot be read or has an unsupported format."""


class CheckpointFormatError(ItersrError, IOError):
    """A checkpoint file is corrupt, truncated, or version-incompatible."""


class NumericError(ItersrError, RuntimeError):
    """A numeric invariant failed at runtime (non-finite loss etc.)."""


class ConfigError(ItersrError, ValueError):
    """Invalid configuration value or unknown configuration key."""
