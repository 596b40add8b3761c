"""Exception types shared across the package."""


class ForestNavError(Exception):
    """Base class for all forestnav errors."""


class NonDivisibleGeometry(ForestNavError):
    """Raster extent cannot be tiled exactly by the requested window grid."""


class OutOfBounds(ForestNavError):
    """A window or pose lies outside the raster / world bounds."""


class DegenerateWindow(ForestNavError):
    """Window too small for the requested feature computation."""


class DimensionMismatch(ForestNavError):
    """Array shapes or vector dimensions disagree."""


class CommandOutOfRange(ForestNavError):
    """Lateral command outside [-1, 1]."""


class TooFewRows(ForestNavError):
    """Not enough rows to fit a normalizer."""


class SingularSystem(ForestNavError):
    """Normal equations are not positive definite (needs R_ii > 0)."""


class EmptyHoldout(ForestNavError):
    """Imitation loss requested on an empty holdout set."""


class PlacementFailure(ForestNavError):
    """Forest generation exhausted its rejection budget."""


class NotACrash(ForestNavError):
    """Failure classification requested on a non-crash episode."""


class UnknownGroup(ForestNavError):
    """Feature group id not present in the layout."""


class ExpertCrashed(ForestNavError):
    """The oracle expert failed a demonstration scenario."""


class ConfigError(ForestNavError):
    """Malformed or unknown configuration key."""
