"""Exception hierarchy shared by all modules.

Every error raised by the library derives from :class:`DeloneTowersError`,
so callers (notably the CLI) can map failures to exit codes without
string matching.
"""


class DeloneTowersError(Exception):
    """Base class for all library errors."""


class ConfigError(DeloneTowersError):
    """Invalid run configuration (CLI exit code 2)."""


# ---------------------------------------------------------------- geometry

class EmptyInput(DeloneTowersError):
    """An operation received an empty point set."""


class DegenerateInput(DeloneTowersError):
    """Two input points coincide within the geometric tolerance."""


class UnassignedPuncture(DeloneTowersError):
    """A puncture lies outside every cell; the window is too small."""


class UnsupportedDimension(DeloneTowersError):
    """Only dimensions 1 and 2 are supported."""


# ------------------------------------------------------------------ delone

class NonPrimitiveSubstitution(DeloneTowersError):
    """Substitution rule has a letter unreachable from another letter."""


class BoundaryViolation(DeloneTowersError):
    """A requested ball or cube does not fit inside the window."""


class CenterNotInSet(DeloneTowersError):
    """Patch center is not a point of the window."""


class MixedRadii(DeloneTowersError):
    """classify() requires all patches to share one radius."""


class WindowTooSmall(DeloneTowersError):
    """The window cannot support the requested computation."""


# ------------------------------------------------------------------ towers

class PeriodicInput(DeloneTowersError):
    """Tower construction rejects generators flagged periodic."""


class CongruenceFailure(DeloneTowersError):
    """Two same-class punctures carry non-congruent cells or tile contents."""


class HypothesisViolation(DeloneTowersError):
    """A zoom hypothesis failed in strict mode."""


class EmptyLevel(DeloneTowersError):
    """No occurrence of the level patch inside the valid region."""


class WindowExhausted(DeloneTowersError):
    """Tower construction ran out of window; carries the partial tower."""

    def __init__(self, message, tower=None, deepest_level=None):
        super().__init__(message)
        self.tower = tower
        self.deepest_level = deepest_level


# ------------------------------------------------------------------ markov

class IndexOutOfRange(DeloneTowersError):
    """Level index outside the built tower."""


class ZeroMeasureClass(DeloneTowersError):
    """A class received zero empirical transverse measure."""


class NonPositiveMatrix(DeloneTowersError):
    """Mixing analysis requires strictly positive transition matrices."""


# ---------------------------------------------------------------- deviation

class TowerTooShallow(DeloneTowersError):
    """No level recognizes patches of the requested radius."""


class NoFullTile(DeloneTowersError):
    """The cube is smaller than every base-level tile."""
