"""Regional consistency test, inverse-variance global estimate and Wald intervals."""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVarianceError, ValidationError
from .numerics import chi_square_upper_tail, normal_quantile
from .survival import RmstEstimate


@dataclass(frozen=True)
class ConsistencyTestResult:
    statistic: float
    df: int
    p_value: float
    estimator: str
    contrast: np.ndarray


def reference_contrast(M):
    """``(M-1) x M`` contrast of every region against region 1."""
    return np.hstack([-np.ones((M - 1, 1)), np.eye(M - 1)])


def _check(estimates):
    if not estimates:
        raise ValidationError("no estimates given")
    tags = {(e.estimator, e.weighting, e.t_star) for e in estimates}
    if len(tags) > 1:
        raise ValidationError(f"estimates mix estimators or truncation times: {sorted(tags, key=str)}")
    var = np.array([e.variance for e in estimates], dtype=float)
    if np.any(~np.isfinite(var)) or np.any(var <= 0):
        raise DegenerateVarianceError("every regional variance must be positive and finite")
    return np.array([e.estimate for e in estimates], dtype=float), var


def consistency_test(estimates, contrast=None):
    """Wald test of equal RMST differences across regions (chi-square, M-1 df)."""
    if len(estimates) < 2:
        raise ValidationError("the consistency test needs at least two regions")
    delta, var = _check(estimates)
    M = delta.size
    E = reference_contrast(M) if contrast is None else np.asarray(contrast, dtype=float)
    Ed = E @ delta
    S = (E * var) @ E.T
    try:
        stat = float(Ed @ np.linalg.solve(S, Ed))
    except np.linalg.LinAlgError:
        raise DegenerateVarianceError("contrast covariance is singular") from None
    stat = max(stat, 0.0)
    return ConsistencyTestResult(stat, M - 1, chi_square_upper_tail(stat, M - 1),
                                 estimates[0].estimator, E)


def global_estimate(estimates):
    """Inverse-variance weighted mean of regional estimates."""
    delta, var = _check(estimates)
    if delta.size == 1:
        return estimates[0]
    prec = 1.0 / var
    est = float(np.sum(delta * prec) / np.sum(prec))
    e0 = estimates[0]
    return RmstEstimate(est, float(1.0 / np.sum(prec)), e0.t_star, "global", "difference",
                        e0.estimator, e0.weighting)


def confidence_interval(estimate, level=0.95):
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if estimate.variance < 0:
        raise ValueError("variance must be nonnegative")
    half = normal_quantile(0.5 * (1.0 + level)) * np.sqrt(estimate.variance)
    return estimate.estimate - half, estimate.estimate + half
