"""Exception hierarchy shared by every module."""


class NearIsometryError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateError(NearIsometryError):
    """Input points are affinely dependent or otherwise degenerate."""


class InfeasibleError(NearIsometryError):
    """A construction cannot meet its distortion budget with the given inputs."""


class ProperInfeasible(InfeasibleError):
    """No proper Euclidean motion realizes the least-squares optimum."""


class NotThin(InfeasibleError):
    """The set has too much D-volume to lie near a hyperplane."""


class ConditionAViolated(InfeasibleError):
    """An angle function rotates too fast: sup t|f'(t)| exceeds its bound."""


class ConditionBViolated(InfeasibleError):
    """A slide displacement field has Jacobian norm at or above its bound."""


class RatioInfeasible(InfeasibleError):
    """The annulus c1 < |x| < c2 is too thin to unwind the requested rotation."""

    def __init__(self, message, required_ratio=None):
        super().__init__(message)
        self.required_ratio = required_ratio


class TranslationInfeasible(InfeasibleError):
    """The translation is too large to be localized in the given annulus."""


class KExceedsD(InfeasibleError):
    """More than D points: a proper extension need not exist."""


class KExceeded(InfeasibleError):
    """More points than the declared bound K."""


class DeltaTooLarge(InfeasibleError):
    """The input distortion is too large for the requested epsilon."""


class BudgetExceeded(NearIsometryError):
    """A combinatorial search exceeded its configured budget."""


class InfiniteEnergy(NearIsometryError):
    """Coincident points make the Riesz energy infinite."""


class ConsistencyError(NearIsometryError):
    """An internal cross-check failed (for example a count mismatch)."""


class PointFileError(NearIsometryError):
    """A point file could not be parsed; carries the offending row number."""

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row
