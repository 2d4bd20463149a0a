"""IPCW RMST regression and the weighted G-formula estimator.

The outcome model is ``link(E[Y | X, Z]) = b0 + b1 Z + b2' g(X) + b3' Z g(X)``
with ``Y = min(T, t*)``, fit by the IPC-weighted estimating equation
``sum w_i D_i (Y_i - mu_i) = 0``.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .data import evaluate_g
from .errors import ConvergenceError, RankDeficiencyError
from .ipsw import _collinear_columns
from .survival import RmstEstimate, censoring_survival, ipc_weights

LINKS = ("identity", "log")


@dataclass(frozen=True)
class RmstRegressionFit:
    link: str
    beta: np.ndarray
    covariance: np.ndarray
    design_spec: object
    iterations: int = 1

    @property
    def L(self):
        return (self.beta.size - 2) // 2

    def linear_predictors(self, G):
        """Linear predictors under ``Z = 1`` and ``Z = 0`` for rows of ``g(X)``."""
        L = self.L
        b0, b1, b2, b3 = self.beta[0], self.beta[1], self.beta[2:2 + L], self.beta[2 + L:]
        eta0 = b0 + G @ b2
        return eta0 + b1 + G @ b3, eta0

    def predict(self, G):
        """``(m1, m0)``: fitted conditional RMST under treatment and control."""
        eta1, eta0 = self.linear_predictors(G)
        if self.link == "log":
            return np.exp(eta1), np.exp(eta0)
        return eta1, eta0


def design_matrix(G, Z):
    Z = np.asarray(Z, dtype=float)[:, None]
    return np.hstack([np.ones_like(Z), Z, G, Z * G])


def design_names(g_spec):
    names = g_spec.names
    return ["intercept", "Z", *names, *[f"Z:{n}" for n in names]]


def fit_weighted_regression(D, y, w, link="identity", names=None, max_iter=100, tol=1e-10):
    """Solve ``sum w_i D_i (y_i - h(D_i b)) = 0``; sandwich covariance with ``w`` fixed."""
    if link not in LINKS:
        raise ValueError(f"unknown link {link!r}")
    D = np.asarray(D, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    pos = w > 0
    Dp = D[pos]
    if np.linalg.matrix_rank(Dp) < D.shape[1]:
        names = names or [f"x{k}" for k in range(D.shape[1])]
        bad = _collinear_columns(Dp, names)
        raise RankDeficiencyError(f"outcome design is rank deficient; collinear columns: {bad}", bad)
    sw = np.sqrt(w[pos])
    if link == "identity":
        beta = np.linalg.lstsq(Dp * sw[:, None], y[pos] * sw, rcond=None)[0]
        mu = D @ beta
        A = (D * w[:, None]).T @ D
        it = 1
    else:
        ybar = np.sum(w * y) / np.sum(w)
        beta = np.zeros(D.shape[1])
        beta[0] = np.log(ybar)
        for it in range(1, max_iter + 1):
            mu = np.exp(D @ beta)
            score = D.T @ (w * (y - mu))
            A = (D * (w * mu)[:, None]).T @ D
            step = linalg.solve(A, score, assume_a="pos")
            beta = beta + step
            if np.abs(step).max() < tol * (1 + np.abs(beta).max()):
                break
        else:
            raise ConvergenceError(f"log-link RMST regression did not converge in {max_iter} iterations")
        mu = np.exp(D @ beta)
        A = (D * (w * mu)[:, None]).T @ D
    resid = y - mu
    S = D * (w * resid)[:, None]
    B = S.T @ S
    Ainv = linalg.inv(A)
    cov = Ainv @ B @ Ainv.T
    return beta, 0.5 * (cov + cov.T), it


def fit_ipcw_rmst_regression(panel, g_spec, t_star, link="identity", ipc_w=None, G_curve=None):
    """Fit the IPCW RMST regression in one region."""
    if ipc_w is None:
        ipc_w = ipc_weights(panel, G_curve or censoring_survival(panel), t_star)
    Gx = evaluate_g(g_spec, panel.covariates)
    D = design_matrix(Gx, panel.treatment)
    y = np.minimum(panel.time, t_star)
    beta, cov, it = fit_weighted_regression(D, y, ipc_w, link, design_names(g_spec))
    return RmstRegressionFit(link, beta, cov, g_spec, it)


def g_formula_jacobian(fit, G, xi):
    """Derivative of the xi-weighted mean model contrast with respect to beta."""
    xi = np.asarray(xi, dtype=float)
    p = xi / xi.sum()
    n = G.shape[0]
    one = np.ones((n, 1))
    d1 = np.hstack([one, one, G, G])
    d0 = np.hstack([one, np.zeros((n, 1)), G, np.zeros_like(G)])
    if fit.link == "identity":
        return p @ (d1 - d0)
    m1, m0 = fit.predict(G)
    return p @ (d1 * m1[:, None] - d0 * m0[:, None])


def g_formula_estimate(fit, panel, weights, t_star, weighting="none"):
    """Weighted G-formula RMST difference with Delta-method variance ``J' Sigma J``."""
    xi = np.asarray(weights, dtype=float)
    G = evaluate_g(fit.design_spec, panel.covariates)
    m1, m0 = fit.predict(G)
    est = float(np.sum(xi * (m1 - m0)) / np.sum(xi))
    J = g_formula_jacobian(fit, G, xi)
    var = float(J @ fit.covariance @ J)
    return RmstEstimate(est, max(var, 0.0), t_star, panel.region_id, "difference", "GF", weighting)
