"""Exception types shared across the toolkit."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ParameterError(ValueError):
    """An argument is outside its allowed range."""


class StateError(RuntimeError):
    """Operation called in the wrong order (e.g. backward without forward)."""


class DataError(ValueError):
    """Dataset contents violate a contract (bad label, empty class, ...)."""


class FormatError(ValueError):
    """A binary file does not match its expected format."""
