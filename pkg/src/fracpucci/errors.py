"""Exception types raised across the package."""


class FracPucciError(Exception):
    """Base class for all package errors."""


class EmptyRegion(FracPucciError, ValueError):
    pass


class GammaDomain(FracPucciError, ValueError):
    pass


class AlphaDomain(FracPucciError, ValueError):
    pass


class InfeasibleEllipticity(FracPucciError, ValueError):
    pass


class SigmaDomain(FracPucciError, ValueError):
    pass


class BarrierScaleFail(FracPucciError, RuntimeError):
    pass


class DensityHypothesisFail(FracPucciError, ValueError):
    pass


class NotNested(FracPucciError, ValueError):
    pass


class NotNegativeAtCenter(FracPucciError, ValueError):
    pass


class ZeroForcing(FracPucciError, ValueError):
    pass


class SchemeDiverged(FracPucciError, RuntimeError):
    pass


class NotTouching(FracPucciError, ValueError):
    """A test function does not touch ``u`` from below at the requested point."""
