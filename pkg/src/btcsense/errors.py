"""Exception hierarchy for btcsense.

Every error raised on a documented failure path derives from
:class:`BtcSenseError`, so callers (and the CLI) can separate configuration
mistakes (:class:`ConfigurationError` subtree) from numerical failures
(:class:`NumericalError` subtree).
"""


class BtcSenseError(Exception):
    """Base class for all btcsense errors."""


class ConfigurationError(BtcSenseError):
    """Invalid user-supplied parameters or run configuration."""


class InvalidSectorError(ConfigurationError):
    """Spin number does not define a valid collective sector (N >= 1)."""


class InvalidParameterError(ConfigurationError):
    """Physical parameter out of range (e.g. kappa <= 0, eta outside (0, 1])."""


class NumericalError(BtcSenseError):
    """A numerical procedure failed to meet its accuracy contract."""


class NonUniqueSteadyStateError(NumericalError):
    """The generator has a (numerically) degenerate null space."""


class BiorthonormalizationError(NumericalError):
    """Left/right eigenvector pairing could not be biorthonormalized."""


class ConsistencyError(NumericalError):
    """Two independent computations of the same quantity disagree."""


class DivergentRateError(NumericalError):
    """A non-decaying mode carries finite weight; the rate integral diverges."""


class HorizonError(NumericalError):
    """Time-integration horizon too short for the slowest decay mode."""


class StepSizeError(NumericalError):
    """Integrator step too large (e.g. per-step jump probability > 0.5)."""


class IntegratorError(NumericalError):
    """Conditional-state integrator violated positivity beyond tolerance."""


class UnstableFilterError(NumericalError):
    """Log-likelihood score diverged during tangent filtering."""


class ModeTrackingError(NumericalError):
    """Ambiguous continuation of an eigenmode across system sizes."""


class FitFailureError(NumericalError):
    """Nonlinear fit failed to converge."""


class WindowError(NumericalError):
    """Regression window still contains transient (non-linear) growth."""
