"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: config/data problems exit 2,
numeric aborts exit 3, verification failures exit 1.
"""


class ShapeError(ValueError):
    """An operand has the wrong shape/rank for the requested operation."""


class ArgumentError(ValueError):
    """An argument value is invalid (bad mode string, non-scalar loss, ...)."""


class DataError(ValueError):
    """Input data is unusable (corrupt WAV, silent noise segment, ...)."""


class ConfigError(ValueError):
    """A configuration file or value is invalid."""


class NumericAbort(ArithmeticError):
    """Training hit a non-finite value; message names the offending tensor."""
