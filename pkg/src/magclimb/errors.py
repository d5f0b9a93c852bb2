"""Exception types shared across the toolkit."""


class MagclimbError(Exception):
    """Base class for all magclimb errors."""


class DomainError(MagclimbError, ValueError):
    """A physical or numeric argument is outside its valid domain."""


class DetachedError(DomainError):
    """No plates attached: the robot-wall oscillator does not exist."""


class ConfigurationError(MagclimbError, ValueError):
    """A configuration is internally inconsistent or unusable."""


class DegenerateDataError(MagclimbError, ValueError):
    """Input data is degenerate for the requested statistic (e.g. zero variance)."""


class ShapeError(MagclimbError, ValueError):
    """Array shapes are inconsistent with the layer or model definition."""


class TrainingError(MagclimbError, RuntimeError):
    """Training diverged or could not proceed."""
