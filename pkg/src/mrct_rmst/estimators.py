"""Weighted Hajek and Augmented RMST differences with sandwich variances.

Both estimators are written as stacked M-estimators. Sampling weights,
IPC weights and the outcome-model coefficients are held fixed when the
sandwich ``A^{-1} B A^{-T}`` is evaluated.
"""

from dataclasses import dataclass

import numpy as np

from .data import evaluate_g
from .errors import EstimabilityError
from .survival import RmstEstimate


@dataclass(frozen=True)
class EstimatingEquationSystem:
    theta: np.ndarray
    scores: np.ndarray  # (n, k) per-subject score rows at theta
    A: np.ndarray
    B: np.ndarray

    @property
    def sandwich(self):
        Ainv = np.linalg.inv(self.A)
        S = Ainv @ self.B @ Ainv.T
        return 0.5 * (S + S.T)


def _ratio_system(masses, values):
    """Solve ``sum_i c_ik (v_ik - theta_k) = 0`` for each column ``k``.

    The Jacobian of the score in ``theta`` is ``-diag(sum_i c_ik)``; the sign
    cancels in the sandwich so ``A`` stores the positive masses.
    """
    totals = masses.sum(axis=0)
    theta = np.sum(masses * values, axis=0) / totals
    scores = masses * (values - theta)
    return EstimatingEquationSystem(theta, scores, np.diag(totals), scores.T @ scores)


def _arm_masses(panel, weights, q, ipc_w):
    xi = np.asarray(weights, dtype=float)
    q = np.ones(panel.n) if q is None else np.asarray(q, dtype=float)
    base = xi * q * np.asarray(ipc_w, dtype=float)
    treated = panel.treatment == 1
    a1 = np.where(treated, base, 0.0)
    a0 = np.where(treated, 0.0, base)
    for arm, a in ((1, a1), (0, a0)):
        if not a.sum() > 0:
            raise EstimabilityError(
                f"region {panel.region_id}: arm {arm} has zero weighted mass "
                "(every subject censored before t*?)")
    return xi, q, a1, a0


def hajek_system(panel, weights, q, ipc_w, t_star):
    _, _, a1, a0 = _arm_masses(panel, weights, q, ipc_w)
    y = np.minimum(panel.time, t_star)
    return _ratio_system(np.column_stack([a1, a0]), np.column_stack([y, y]))


def hajek_estimate(panel, weights, q, ipc_w, t_star, weighting="none"):
    """Ratio-of-weighted-sums contrast of ``Y = min(U, t*)`` between arms."""
    sys_ = hajek_system(panel, weights, q, ipc_w, t_star)
    c = np.array([1.0, -1.0])
    est = float(c @ sys_.theta)
    var = float(c @ sys_.sandwich @ c)
    return RmstEstimate(est, max(var, 0.0), t_star, panel.region_id, "difference", "HJ", weighting)


def augmented_system(panel, weights, q, ipc_w, m1, m0, t_star, model_mean="main"):
    """Stacked system for (residual mean arm 1, arm 0, model mean arm 1, arm 0).

    ``model_mean="main"`` normalizes both model-mean terms by ``sum xi``;
    ``"control-weighted"`` normalizes the arm-0 term by ``sum xi q0`` over
    controls instead.
    """
    xi, q, a1, a0 = _arm_masses(panel, weights, q, ipc_w)
    y = np.minimum(panel.time, t_star)
    m1 = np.broadcast_to(np.asarray(m1, dtype=float), y.shape)
    m0 = np.broadcast_to(np.asarray(m0, dtype=float), y.shape)
    if model_mean == "main":
        b0 = xi
    elif model_mean == "control-weighted":
        b0 = np.where(panel.treatment == 0, xi * q, 0.0)
    else:
        raise ValueError(f"unknown model_mean {model_mean!r}")
    masses = np.column_stack([a1, a0, xi, b0])
    values = np.column_stack([y - m1, y - m0, m1, m0])
    return _ratio_system(masses, values)


def augmented_estimate(panel, weights, q, ipc_w, fit, t_star, weighting="none",
                       model_mean="main", predictions=None):
    """Doubly robust contrast: Hajek contrast of residuals plus weighted model contrast.

    ``predictions=(m1, m0)`` overrides the fitted outcome model.
    """
    if predictions is None:
        G = evaluate_g(fit.design_spec, panel.covariates)
        m1, m0 = fit.predict(G)
    else:
        m1, m0 = predictions
    sys_ = augmented_system(panel, weights, q, ipc_w, m1, m0, t_star, model_mean)
    c = np.array([1.0, -1.0, 1.0, -1.0])
    est = float(c @ sys_.theta)
    var = float(c @ sys_.sandwich @ c)
    return RmstEstimate(est, max(var, 0.0), t_star, panel.region_id, "difference", "AG", weighting)
