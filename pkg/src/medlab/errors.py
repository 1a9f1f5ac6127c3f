"""Exception types shared across the package."""


class MedlabError(Exception):
    """Base class for all package errors."""


class UnsupportedOrderError(MedlabError):
    """Moment requested beyond the supported polynomial degree."""


class StateInvalidError(MedlabError):
    """An overlap state or covariance matrix violates its invariants."""


class UnsupportedConfigurationError(MedlabError):
    """Operation called outside the configuration it is derived for."""


class IntegrationBlowupError(MedlabError):
    """Deterministic integration left the admissible region."""

    def __init__(self, step, message=""):
        self.step = step
        super().__init__(message or f"integration blew up at step {step}")


class DivergenceError(MedlabError):
    """Stochastic simulation produced non-finite weights."""

    def __init__(self, step, message=""):
        self.step = step
        super().__init__(message or f"weights diverged at step {step}")


class StepRejectedError(MedlabError):
    """A stochastic update produced an invalid state."""


class NoCrossingError(MedlabError):
    """Trajectory never crossed the requested risk threshold."""

    def __init__(self, final_ratio, message=""):
        self.final_ratio = final_ratio
        super().__init__(
            message
            or f"risk never crossed the threshold (final excess ratio {final_ratio:.6g})"
        )


class UnstableRateError(MedlabError):
    """Linearized escape rate is non-positive; the exit never happens."""


class DegenerateDiffusionError(MedlabError):
    """Zero diffusion: the stochastic exit time is undefined."""


class PrecisionError(MedlabError):
    """Series evaluation failed to converge to the requested tolerance."""


class IllConditionedInitError(MedlabError):
    """Initialization requested with too few ambient dimensions."""


class InternalConsistencyError(MedlabError):
    """A derived classification disagrees with its analytic expectation."""


class ConfigError(MedlabError):
    """Invalid experiment configuration; carries the offending field name."""

    def __init__(self, field, message=""):
        self.field = field
        super().__init__(message or f"invalid config field: {field}")
