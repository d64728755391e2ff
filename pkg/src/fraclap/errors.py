"""Exception hierarchy shared by every fraclap module."""


class FraclapError(Exception):
    """Base class for all fraclap errors."""


class OutOfRange(FraclapError, ValueError):
    pass


class Supercritical(FraclapError, ValueError):
    pass


class RieszInvalid(FraclapError, ValueError):
    pass


class Inadmissible(FraclapError, ValueError):
    """Field data outside the weighted class L_{2s} or violating a sign flag."""


class DomainError(FraclapError, ValueError):
    pass


class Singular(FraclapError, ValueError):
    pass


class UnsupportedOrder(FraclapError, ValueError):
    pass


class QuadratureNotConverged(FraclapError, RuntimeError):
    def __init__(self, message, value=None, error=None):
        super().__init__(message)
        self.value = value
        self.error = error


class MarginError(FraclapError, ValueError):
    pass


class ResampleError(FraclapError, ValueError):
    pass


class EmptyRegion(FraclapError, ValueError):
    pass


class RegularityPrecondition(FraclapError, ValueError):
    pass


class SignViolation(FraclapError, ValueError):
    pass


class ClassMismatch(FraclapError, ValueError):
    pass


class NotPositive(FraclapError, ValueError):
    pass


class GradientUnavailable(FraclapError, ValueError):
    pass


class SubcriticalViolation(FraclapError, ValueError):
    pass


class EmptyBall(FraclapError, ValueError):
    pass


class GridFormatError(FraclapError, ValueError):
    pass


class ParseError(FraclapError, ValueError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


class ConfigValidationError(FraclapError, ValueError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message
