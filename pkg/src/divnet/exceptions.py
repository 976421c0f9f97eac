"""Exception hierarchy shared by every module of the package."""


class DivnetError(Exception):
    """Base class for all errors raised by divnet."""


class ShapeError(DivnetError, ValueError):
    """Array shapes are incompatible."""


class SpecError(DivnetError, ValueError):
    """A layer or network specification violates a constraint."""


class ContractError(DivnetError, RuntimeError):
    """An API was called out of order or with stale state (e.g. a stale cache)."""


class NumericError(DivnetError, FloatingPointError):
    """A non-finite value appeared where finite numbers are required."""


class InputError(DivnetError, ValueError):
    """Data passed in is invalid (labels out of range, empty datasets, ...)."""


class ConfigError(DivnetError, ValueError):
    """A configuration document or object is invalid."""


class FormatError(DivnetError, ValueError):
    """A file does not follow the expected binary or textual format."""


class DegenerateInputError(InputError):
    """A metric is undefined for the given input (e.g. R^2 of a constant target)."""


class TaskError(DivnetError, ValueError):
    """An operation was requested for the wrong task kind."""


class ClockError(DivnetError, OSError):
    """The timing clock misbehaved (e.g. went backwards)."""
