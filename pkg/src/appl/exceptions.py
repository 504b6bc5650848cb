"""Exception hierarchy shared by the library and the command line."""


class APPLError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(APPLError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(APPLError, ArithmeticError):
    """A loss or gradient became non-finite."""


class ConfigError(APPLError, ValueError):
    """Invalid configuration key, type or value."""


class FormatError(APPLError, ValueError):
    """A checkpoint or episode file could not be parsed or validated."""


class CheckpointError(FormatError):
    """Checkpoint is malformed or incompatible with the current run."""
