"""Exception hierarchy.

Every numerical failure derives from :class:`ScoreBayesError` so the CLI can
map it to exit code 3 and name the failing operation.
"""


class ScoreBayesError(Exception):
    """Base class; ``operation`` names the routine that failed."""

    def __init__(self, message, operation=None):
        super().__init__(message)
        self.operation = operation


class NotPositiveDefinite(ScoreBayesError):
    pass


class NonFiniteEvaluation(ScoreBayesError):
    pass


class NonFiniteDensity(NonFiniteEvaluation):
    pass


class NonFiniteDerivative(NonFiniteEvaluation):
    pass


class NonFiniteScore(NonFiniteEvaluation):
    pass


class DomainError(ScoreBayesError, ValueError):
    pass


class ZeroMass(ScoreBayesError):
    pass


class IntegralUnavailable(ScoreBayesError):
    pass


class UnknownNormalizer(ScoreBayesError):
    pass


class MaxIterations(ScoreBayesError):
    pass


class DegenerateSample(ScoreBayesError):
    """Sample carries no finite concentration estimate."""


class SingularGamma(ScoreBayesError):
    pass


class SingularJacobian(ScoreBayesError):
    pass


class UnsupportedOrder(ScoreBayesError):
    pass


class ZeroAcceptance(ScoreBayesError):
    pass


class ConfigError(ScoreBayesError):
    """Bad configuration or input file; the CLI maps it to exit code 2."""
