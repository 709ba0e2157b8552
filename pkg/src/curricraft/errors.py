"""Exception types shared across the package."""


class CurricraftError(Exception):
    """Base class for all package errors."""


class InfeasibleRanges(CurricraftError):
    """No feasible task assignment exists within the sampling ranges."""


class NonInvertible(CurricraftError):
    """Affine map has a zero scale coefficient and cannot be inverted."""


class RejectionBudgetExhausted(CurricraftError):
    """Noisy mapping failed to produce a feasible task within the reject budget."""


class ProtocolViolation(CurricraftError):
    """Environment stepped before reset or after termination."""


class PlacementFailure(CurricraftError):
    """Could not place the requested objects inside the arena."""


class ShapeMismatch(CurricraftError):
    """Observation dimension does not match the network input layer."""


class NonFiniteGradient(CurricraftError):
    """A gradient entry became NaN or infinite (learning rate blow-up)."""


class NoFeasibleGoal(CurricraftError):
    """No unencountered feasible goal category is available for the next task."""


class ValidationError(CurricraftError):
    """A config file or handcrafted-curriculum file violates its schema."""


class InsufficientEpisodes(CurricraftError):
    """A learning curve has fewer target-task episodes than the metric needs."""


class ConfigError(ValidationError):
    """Experiment config failed validation; message names the offending path."""
