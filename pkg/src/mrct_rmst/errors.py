"""Exception and warning types raised across the package."""


class MrctError(Exception):
    """Base class for all errors raised by ``mrct_rmst``."""


class SchemaError(MrctError):
    """A required input column is missing or the schema mapping is invalid."""


class ValidationError(MrctError):
    """Input values violate a data invariant."""


class SpecError(MrctError):
    """A covariate-function specification cannot be parsed or evaluated."""


class InfeasibleCalibrationError(MrctError):
    """The calibration target lies outside the region's covariate support."""

    def __init__(self, message, max_constraint_violation=float("nan"), offending=None):
        super().__init__(message)
        self.max_constraint_violation = max_constraint_violation
        self.offending = offending


class DegenerateMomentError(MrctError):
    """Calibration functions are collinear on the region's sample."""


class PositivityError(MrctError):
    """A weight denominator vanished (sampling score or censoring survival)."""


class RankDeficiencyError(MrctError):
    """A design matrix is rank deficient."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class ConvergenceError(MrctError):
    """An iterative solver failed to converge."""


class EmptyArmError(MrctError):
    """A treatment arm has no at-risk mass."""


class EstimabilityError(MrctError):
    """An estimator is not defined on the supplied data."""


class DegenerateVarianceError(MrctError):
    """A variance needed for inference is zero or not finite."""


class ScenarioError(MrctError):
    """A simulation scenario is invalid or cannot be sampled."""


class ConfigError(MrctError):
    """A run configuration is invalid."""


class SeparationWarning(UserWarning):
    """Region-membership model shows (quasi-)complete separation."""


class OverlapWarning(UserWarning):
    """Some subjects have near-zero region-membership probability."""


class VarianceTermWarning(UserWarning):
    """Degenerate variance terms were dropped."""
