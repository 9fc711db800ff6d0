"""Exception types raised across the package."""


class PPAIError(Exception):
    """Base class for all package errors."""


# qagate
class EmptyQuery(PPAIError, ValueError):
    pass


class DimensionMismatch(PPAIError, ValueError):
    pass


class DegenerateProjection(PPAIError, ValueError):
    pass


class NonPositiveTopScores(PPAIError, ValueError):
    pass


class LabelDimensionMismatch(PPAIError, ValueError):
    pass


class EmptyTrainingSet(PPAIError, ValueError):
    pass


class ZeroVector(PPAIError, ValueError):
    pass


class EmptyBatch(PPAIError, ValueError):
    pass


class ParseError(PPAIError, ValueError):
    pass


# registry
class FanoutTooLarge(PPAIError, ValueError):
    pass


# scheduler
class NoLiveAgents(PPAIError, RuntimeError):
    pass


class DegenerateLikelihood(UserWarning):
    """Emitted when a Bayes update underflows; the prior is kept."""


# game_analysis
class InstanceTooLarge(PPAIError, ValueError):
    pass


class NoEquilibriumFound(PPAIError, RuntimeError):
    pass


# simnet / harness
class ConfigInvalid(PPAIError, ValueError):
    pass


class SpecInvalid(PPAIError, ValueError):
    pass
