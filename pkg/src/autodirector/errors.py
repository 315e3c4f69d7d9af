"""Exception hierarchy shared by every stage of the directing engine."""


class DirectorError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(DirectorError, ValueError):
    """Array arguments have incompatible or illegal shapes."""


class NumericError(DirectorError, ArithmeticError):
    """A computation produced non-finite values from finite inputs."""


class ConfigurationError(DirectorError, ValueError):
    """A configuration value is out of its documented range."""


class DegenerateBatchError(DirectorError, RuntimeError):
    """A training batch carries no usable supervision."""


class InvalidEventError(DirectorError, ValueError):
    """An event does not fit the buffer or violates its own bounds."""


class ContractViolation(DirectorError, ValueError):
    """A caller broke a documented precondition."""


class ScriptError(DirectorError, ValueError):
    """A synthetic match script is internally inconsistent."""


class StreamError(DirectorError, RuntimeError):
    """A feature stream is malformed or ends unexpectedly."""


class UndefinedMetricError(DirectorError, ValueError):
    """The requested metric has no defined value on these inputs."""


class DataError(DirectorError, ValueError):
    """An input file cannot be parsed."""
