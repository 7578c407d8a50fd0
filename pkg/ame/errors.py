class AMEError(Exception):
    """Base class for every error raised by the ame package."""


class InvalidRangeError(AMEError, ValueError):
    pass


class ConditionViolatedError(AMEError, ValueError):
    pass


class DimensionMismatchError(AMEError, ValueError):
    pass


class BudgetError(AMEError, ValueError):
    """Attack budget breaks the bounded-adversary assumption."""


class EnumerationBudgetExceeded(AMEError, RuntimeError):
    pass


class SearchBudgetExceeded(AMEError, RuntimeError):
    pass


class EpisodeFinishedError(AMEError, RuntimeError):
    pass


class ConfigError(AMEError, ValueError):
    pass


class EmptyInputError(AMEError, ValueError):
    pass


class PolicyAsymmetryError(AMEError, RuntimeError):
    """Base policy changed its action when the k messages were reordered."""
