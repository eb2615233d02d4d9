"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`PhaselessError`.  The CLI maps the three families below onto exit
codes (config 2, numerical 3, I/O 4).
"""


class PhaselessError(Exception):
    """Base class for all package errors."""


class ConfigError(PhaselessError, ValueError):
    """Invalid configuration or violated precondition on user input."""


class NumericalError(PhaselessError, ArithmeticError):
    """A numerical stage failed (no convergence, inconsistent data, ...)."""


class FormatError(PhaselessError, IOError):
    """Malformed, truncated or incompatible artifact file."""


# geometry
class EmptySliceError(ConfigError):
    pass


class DegenerateChordError(ConfigError):
    pass


class NonCoplanarError(ConfigError):
    pass


class ChordMissError(ConfigError):
    pass


# phantom
class SmallnessError(ConfigError):
    """Phantom too strong for the linearized model."""


# forward / solvers
class ConvergenceError(NumericalError):
    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = history


class CausticError(NumericalError):
    pass


# extraction
class DegenerateDataError(NumericalError):
    pass


class InconsistentDataError(NumericalError):
    pass


class SpanError(NumericalError):
    """The frequency sweep is too short for the requested quantity."""


class IndeterminateError(SpanError):
    """Oscillation present but less than one period observed."""


# reconstruction
class MissingSliceError(ConfigError):
    pass


class UnsupportedGridError(ConfigError):
    pass


class ResolutionError(ConfigError):
    pass


class DomainError(ConfigError):
    pass


class ShapeMismatchError(ConfigError):
    pass


class VersionError(FormatError):
    pass
