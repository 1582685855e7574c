"""Exception types shared by the kinlab modules."""


class KinlabError(Exception):
    """Base class for all kinlab errors."""


class InvalidStability(KinlabError, ValueError):
    """Stability index outside (0, 1]."""


class GridTooCoarse(KinlabError, ValueError):
    """The grid cannot resolve the requested density to the stated tolerance."""


class AliasingDetected(KinlabError, ValueError):
    """Too much mass leaves the grid window (periodic wrap-around would corrupt the result)."""


class RegimeViolated(KinlabError, ValueError):
    """The hypotheses of a concentration bound do not hold at the requested parameters."""


class SingularTarget(KinlabError, ValueError):
    """A covariance that must be positive definite is not."""


class QuadratureNotConverged(KinlabError, RuntimeError):
    """Adaptive quadrature failed to reach its tolerance."""


class OutOfTableRange(KinlabError, ValueError):
    """No decay exponent is tabulated for the requested (model, s, p)."""


class DegenerateFit(KinlabError, ValueError):
    """Rate fit has too few usable points."""


class ConfigInvalid(KinlabError, ValueError):
    """A run configuration violates a hypothesis of the corresponding result."""
