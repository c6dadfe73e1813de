"""Exception hierarchy shared by every crmlab module."""


class CrmlabError(Exception):
    """Base class for all crmlab errors."""


class ConfigError(CrmlabError, ValueError):
    """A scenario or application configuration value is invalid.

    The message names the offending field, e.g. ``reference.ell: must be <= 0``.
    """


class IntegrationError(CrmlabError):
    """Numerical integration could not produce an accepted trajectory."""


class Divergence(IntegrationError):
    """The state became non-finite."""


class StepUnderflow(IntegrationError):
    """The adaptive integrator needed a step below its minimum."""


class TrajectoryError(CrmlabError):
    """A trajectory cannot serve the requested query."""


class UnknownChannel(TrajectoryError, KeyError):
    """A trajectory channel was requested that the trajectory does not carry."""

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown channel"


class MissingChannel(UnknownChannel):
    """An analysis needs a channel the trajectory does not carry."""


class TooFewSamples(TrajectoryError):
    pass


class ZeroInputGain(CrmlabError, ValueError):
    """The plant input gain k_p is zero, so matching gains do not exist."""


class OutsideSet(CrmlabError):
    """A parameter vector lies outside its projection set."""


class MissingTruth(CrmlabError):
    """A certificate needs the true plant parameters and the scenario has none."""


class DegenerateFit(CrmlabError):
    pass


class PreconditionViolated(CrmlabError):
    """The hypotheses of a bound do not hold for this scenario."""


class Undersampled(CrmlabError):
    """Too few samples per period for the requested number of harmonics."""


class NoMatch(CrmlabError):
    """No gains satisfy the matching conditions for this plant/reference pair."""


class AssumptionViolated(CrmlabError):
    """L or Gamma is not in the structured form the MIMO certificates need."""


class UnstableGain(CrmlabError):
    """The observer feedback gain leaves g_theta non-negative."""


class MismatchedScenarios(CrmlabError):
    """Two runs that should share plant, noise and regions do not."""


class SingularBeta(CrmlabError):
    pass


class UnsupportedOrder(CrmlabError):
    pass


class SingularInertia(CrmlabError):
    pass


class PeriodicityWarning(UserWarning):
    """The analysis window is not periodic to within tolerance."""
