"""Exception hierarchy shared by every module and mapped to CLI exit codes."""


class OscModeError(Exception):
    exit_code = 3


class FormatError(OscModeError):
    """Malformed file header or structure."""


class DataError(OscModeError):
    """Data content violates a precondition (non-finite, unlabeled, too few rows...)."""


class ShapeError(OscModeError):
    """Array or sequence dimensions are incompatible."""


class DegenerateSignalError(OscModeError):
    """Signal has no variation where variation is required."""


class UnsupportedError(OscModeError):
    """Request is valid but outside what the implementation supports."""


class IoError(OscModeError):
    exit_code = 2


class NumericalError(OscModeError):
    """Training or fitting produced non-finite values."""

    exit_code = 4


class ConfigError(OscModeError):
    exit_code = 1
