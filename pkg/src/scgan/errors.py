"""Exception hierarchy shared across the package."""


class ScganError(Exception):
    """Base class for all domain errors raised by scgan."""


class ShapeError(ScganError, ValueError):
    pass


class DecodeError(ScganError):
    pass


class DataError(ScganError):
    pass


class ParseError(ScganError):
    pass


class ValidationError(ScganError, ValueError):
    pass


class ConfigError(ScganError):
    pass


class ResourceError(ScganError):
    pass


class IntegrityError(ScganError):
    pass


class FingerprintError(IntegrityError):
    pass


class NumericError(ScganError, ArithmeticError):
    """A loss component evaluated to NaN or inf."""

    def __init__(self, component, value=float("nan")):
        self.component = component
        self.value = value
        super().__init__(f"non-finite value {value!r} in loss component '{component}'")
