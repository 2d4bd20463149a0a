"""Entropy-balancing calibration weights.

For one region with covariate functions ``g(X_i)`` and target moments
``g_tilde`` the weights minimize ``sum p_i log p_i`` subject to
``sum p_i g(X_i) = g_tilde`` and ``sum p_i = 1``. The solution has the form
``p_i ∝ exp(lambda' g(X_i))`` where ``lambda`` minimizes the convex dual

    phi(lambda) = log sum_i exp(lambda' (g(X_i) - g_tilde)),

whose gradient is the weighted constraint residual ``sum p_i (g(X_i) - g_tilde)``.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import logsumexp, softmax

from .data import evaluate_g
from .errors import DegenerateMomentError, InfeasibleCalibrationError

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-9
    max_iter: int = 200
    ridge: float = 1e-12


@dataclass(frozen=True)
class CalibrationSolution:
    lam: np.ndarray
    weights: np.ndarray
    converged: bool
    iterations: int
    max_constraint_violation: float


def _dual(G, lam):
    eta = G @ lam
    return logsumexp(eta), softmax(eta)


def solve_calibration(G, g_tilde, opts=None, names=None):
    """Calibrate rows of ``G`` (``n x L``) to ``g_tilde`` by damped Newton on the dual."""
    opts = opts or SolverOptions()
    G = np.asarray(G, dtype=float)
    g_tilde = np.asarray(g_tilde, dtype=float)
    n, L = G.shape
    names = list(names) if names is not None else [f"g{l + 1}" for l in range(L)]
    if L >= n:
        raise DegenerateMomentError(f"need fewer calibration functions ({L}) than subjects ({n})")

    # Collinear g functions make the dual Hessian singular everywhere.
    Gc = G - G.mean(axis=0)
    scale = np.abs(Gc).max(axis=0)
    if np.any(scale == 0) or np.linalg.matrix_rank(Gc / np.where(scale > 0, scale, 1.0)) < L:
        raise DegenerateMomentError(f"calibration functions {names} are collinear on this sample")

    # A target outside the bounding box is certainly infeasible.
    lo, hi = G.min(axis=0), G.max(axis=0)
    outside = np.maximum(lo - g_tilde, g_tilde - hi)
    if np.any(outside >= 0):
        l = int(np.argmax(outside))
        raise InfeasibleCalibrationError(
            f"target for {names[l]} = {g_tilde[l]:.6g} lies outside the region's range "
            f"[{lo[l]:.6g}, {hi[l]:.6g}]",
            max_constraint_violation=float(np.abs(G.mean(axis=0) - g_tilde).max()),
            offending=names[l],
        )

    D = G - g_tilde
    lam = np.zeros(L)
    f, p = _dual(D, lam)
    grad = p @ D
    it = 0
    while np.abs(grad).max() > opts.tol and it < opts.max_iter:
        it += 1
        Dc = D - grad
        H = (Dc * p[:, None]).T @ Dc
        try:
            step = -linalg.cho_solve(linalg.cho_factor(H, lower=True), grad)
        except linalg.LinAlgError:
            H = H + opts.ridge * max(np.trace(H), 1e-300) / L * np.eye(L)
            try:
                step = -linalg.cho_solve(linalg.cho_factor(H, lower=True), grad)
            except linalg.LinAlgError:
                break
        slope = grad @ step
        t = 1.0
        while True:
            f_new, p_new = _dual(D, lam + t * step)
            # Slack of a few ulps: near the optimum decreases fall below roundoff.
            if f_new <= f + 1e-4 * t * slope + 8 * _EPS * max(1.0, abs(f)) or t < 1e-12:
                break
            t *= 0.5
        if t < 1e-12 and f_new > f:
            break
        lam = lam + t * step
        f, p = f_new, p_new
        grad = p @ D

    viol = np.abs(grad)
    if it and viol.max() <= opts.tol:
        # One more Newton step drives the residual to roundoff, so identities
        # that rely on exact moment matching hold far below the stopping tolerance.
        Dc = D - grad
        H = (Dc * p[:, None]).T @ Dc
        try:
            lam_new = lam - linalg.cho_solve(linalg.cho_factor(H, lower=True), grad)
            _, p_new = _dual(D, lam_new)
            grad_new = p_new @ D
            if np.all(np.isfinite(p_new)) and np.abs(grad_new).max() < viol.max():
                lam, p, grad, viol = lam_new, p_new, grad_new, np.abs(grad_new)
        except linalg.LinAlgError:
            pass
    if viol.max() > opts.tol or not np.all(np.isfinite(p)):
        l = int(np.argmax(viol))
        raise InfeasibleCalibrationError(
            f"calibration did not converge after {it} iterations; max constraint violation "
            f"{viol.max():.3g} on {names[l]} (target likely outside the region's covariate support)",
            max_constraint_violation=float(viol.max()),
            offending=names[l],
        )
    return CalibrationSolution(lam, p, True, it, float(viol.max()))


def calibrate_region(panel, target, opts=None):
    """Calibration weights for one region toward ``target`` (a :class:`CalibrationTarget`)."""
    G = evaluate_g(target.g_spec, panel.covariates)
    return solve_calibration(G, target.g_tilde, opts, target.g_names)


def effective_sample_size(weights):
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    return float(1.0 / np.sum(w * w))
