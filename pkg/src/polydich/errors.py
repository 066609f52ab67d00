"""Exception types raised across the package."""


class PolyDichError(Exception):
    """Base class for computational errors."""


class DomainError(PolyDichError, ValueError):
    """Evaluation requested outside 1 <= tau <= t."""


class IntegrationError(PolyDichError):
    """The adaptive integrator could not meet its tolerance."""


class UnknownScenarioError(PolyDichError, KeyError):
    pass


class UnboundedSupremumError(PolyDichError):
    """A Lyapunov-norm supremum keeps growing at the grid edge."""


class SingularRestrictionError(PolyDichError):
    """The evolution restricted to the unstable space is numerically singular."""


class AmbiguousSplitError(PolyDichError):
    """A fitted growth exponent sits inside the dead zone around zero."""


class RankCollapseError(PolyDichError):
    pass


class NonComplementaryError(PolyDichError):
    """Stable and unstable subspaces do not span the state space."""


class WindowCoverageError(PolyDichError):
    pass


class PicardConvergenceError(PolyDichError):
    pass
