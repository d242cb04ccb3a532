"""Exception types raised by ucplab."""


class UcpLabError(Exception):
    """Base class for all library errors."""


class IncommensurateBox(UcpLabError, ValueError):
    pass


class DeloneInfeasible(UcpLabError, ValueError):
    pass


class NotDelone(UcpLabError, ValueError):
    pass


class GeometryViolation(UcpLabError, ValueError):
    pass


class DeltaTooLarge(UcpLabError, ValueError):
    pass


class BadPotential(UcpLabError, ValueError):
    pass


class GridAlignment(UcpLabError, ValueError):
    pass


class UnderResolvedBall(UcpLabError, ValueError):
    pass


class NotDominating(UcpLabError, ValueError):
    pass


class EigNotConverged(UcpLabError, RuntimeError):
    """Iterative eigensolver stopped before reaching the residual tolerance.

    ``residuals`` holds the relative residuals achieved for the requested pairs.
    """

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class TooManyDropped(UcpLabError, RuntimeError):
    pass


class ConfigError(UcpLabError, ValueError):
    """Invalid experiment configuration; ``field`` names the offending entry."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
