"""Exception hierarchy shared by all hepplab modules."""


class HepplabError(Exception):
    """Base class for every error raised by the package."""


class ShapeError(HepplabError, ValueError):
    pass


class SizeCap(HepplabError):
    """A basis or tensor would exceed the configured size cap."""

    def __init__(self, d, n, size, cap):
        super().__init__(f"basis size {size} for (d={d}, n={n}) exceeds cap {cap}")
        self.d, self.n, self.size, self.cap = d, n, size, cap


class NumericalError(HepplabError):
    pass


class InvalidPotential(HepplabError, ValueError):
    pass


class InvalidModel(HepplabError, ValueError):
    pass


class BlowupSuspected(NumericalError):
    """Step size collapsed; ``last_time`` is the last accepted time."""

    def __init__(self, message, last_time):
        super().__init__(message)
        self.last_time = last_time


class SolverError(NumericalError):
    pass


class IdentityViolation(HepplabError):
    def __init__(self, message, deviation):
        super().__init__(message)
        self.deviation = deviation


class RangeError(HepplabError, ValueError):
    pass


class TransportMismatch(HepplabError):
    def __init__(self, message, deviation):
        super().__init__(message)
        self.deviation = deviation


class QuadratureError(NumericalError):
    def __init__(self, message, estimate):
        super().__init__(message)
        self.estimate = estimate


class InsufficientData(HepplabError):
    pass


class ConfigError(HepplabError):
    pass


class ParseError(ConfigError):
    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnknownKey(ConfigError):
    def __init__(self, key, line):
        super().__init__(f"line {line}: unknown key {key!r}")
        self.key, self.line = key, line


class TruncationWarning(UserWarning):
    """Truncation tail above tolerance; carried in results, never raised."""
