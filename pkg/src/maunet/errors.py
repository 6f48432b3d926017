"""Exception hierarchy shared by every maunet module."""


class MAUNetError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(MAUNetError, ValueError):
    """Tensor shapes or dtypes are incompatible for the requested op."""


class ConfigError(MAUNetError, ValueError):
    """A configuration value (kernel size, stride, model width, ...) is invalid."""


class UsageError(MAUNetError, ValueError):
    """An API was called in a way its contract forbids."""


class NumericalError(MAUNetError, ArithmeticError):
    """A non-finite value appeared, or a numerical check failed."""


class DataError(MAUNetError, ValueError):
    """Input data (masks, image files, labels) is malformed."""


class CheckpointError(MAUNetError):
    """Base class for checkpoint read failures."""


class VersionError(CheckpointError):
    pass


class CorruptionError(CheckpointError):
    pass


class IncompatibilityError(CheckpointError):
    pass
