"""Exception taxonomy shared across the package."""


class GlindError(Exception):
    """Base class for all library errors."""


class ShapeError(GlindError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(GlindError):
    """A configuration value or precondition is invalid."""


class DataError(GlindError):
    """A data file failed to load; the message names the file and line."""


class UsageError(GlindError):
    """The API was called in an unsupported way."""


class RefusalError(GlindError):
    """The requested exact computation is too large to enumerate."""


class NonFiniteError(GlindError):
    """A tensor, or an operation result, contains NaN or Inf."""


class TrainingDiverged(GlindError):
    """The training loss became non-finite; the message names the epoch."""
