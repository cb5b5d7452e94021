"""Exception types raised across the package."""


class SMCError(Exception):
    """Base class for all package errors."""


class DimensionError(SMCError, ValueError):
    """Two measures (or a measure and a kernel) live on different alphabets."""


class DomainError(SMCError, ValueError):
    """An argument is outside the range where the quantity is defined."""


class DegenerateWeightError(SMCError, ArithmeticError):
    """All selection weights are zero, so no ancestor can be drawn."""


class NonTerminationError(SMCError, RuntimeError):
    """A rejection loop exceeded its iteration budget."""


class ConfigError(SMCError, ValueError):
    """Invalid or incomplete experiment configuration."""


class UnsupportedError(SMCError, ValueError):
    """The requested computation is deliberately not provided."""
