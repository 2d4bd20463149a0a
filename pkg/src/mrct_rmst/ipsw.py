"""Inverse-probability-of-sampling weights and inverse treatment-propensity factors."""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import log_softmax

from .errors import (ConvergenceError, OverlapWarning, PositivityError,
                     RankDeficiencyError, SeparationWarning)

KNOWN_LOG_LINEAR = "known-log-linear"
KNOWN_LOGISTIC_NONLINEAR = "known-logistic-nonlinear"
ESTIMATED = "estimated-region-membership"


@dataclass(frozen=True)
class SamplingScoreModel:
    """Sampling-score model.

    For the known kinds ``coefficients[r] = (eta0, eta1, eta2)`` acting on
    ``(1, X1, X2)`` (log-linear) or ``(1, X1*X2, exp(X2/10))`` (logistic).
    For the estimated kind ``coefficients`` holds the multinomial-logistic
    fit and ``probabilities[r]`` the fitted ``P(R = k | X)`` rows for the
    subjects of region ``r``.
    """

    kind: str
    coefficients: dict = field(default_factory=dict)
    probabilities: dict = field(default_factory=dict)
    sizes: dict = field(default_factory=dict)
    ridge: float = 0.0

    def score(self, region_id, X):
        X = np.asarray(X, dtype=float)
        eta = np.asarray(self.coefficients[region_id], dtype=float)
        if self.kind == KNOWN_LOG_LINEAR:
            return np.exp(eta[0] + X[:, 0] * eta[1] + X[:, 1] * eta[2])
        if self.kind == KNOWN_LOGISTIC_NONLINEAR:
            xs1 = X[:, 0] * X[:, 1]
            xs2 = np.exp(X[:, 1] / 10.0)
            return 1.0 / (1.0 + np.exp(-(eta[0] + eta[1] * xs1 + eta[2] * xs2)))
        raise ValueError(f"score() is only defined for known kinds, not {self.kind!r}")


@dataclass(frozen=True)
class IpswWeights:
    weights: np.ndarray
    source: str


def _normalize(w):
    w = np.asarray(w, dtype=float)
    return w / w.sum()


def ipsw_from_known_score(panel, model):
    """Weights ``∝ 1 / rho_r(X)`` from a known parametric sampling score."""
    rho = model.score(panel.region_id, panel.covariates)
    if np.any(rho < 1e-300):
        raise PositivityError(
            f"region {panel.region_id}: sampling score underflows for "
            f"{int(np.sum(rho < 1e-300))} subjects (positivity of enrollment violated)"
        )
    rho = np.minimum(rho, 1.0)
    return IpswWeights(_normalize(1.0 / rho), model.kind)


def _collinear_columns(D, names):
    """Names of columns that are linear combinations of earlier ones."""
    bad = []
    kept = []
    for k in range(D.shape[1]):
        trial = D[:, kept + [k]]
        if np.linalg.matrix_rank(trial) == len(kept) + 1:
            kept.append(k)
        else:
            bad.append(names[k])
    return bad


def _fit_multinomial(D, y, K, ridge, max_iter=100, tol=1e-10):
    """Newton-Raphson for multinomial logit with class 0 as reference.

    Returns coefficients of shape ``(K - 1, D.shape[1])`` and a flag raised
    when the coefficients run off (separation).
    """
    n, q = D.shape
    Y = np.zeros((n, K))
    Y[np.arange(n), y] = 1.0
    B = np.zeros((K - 1, q))
    penalty = np.ones(q)
    penalty[0] = 0.0
    diverging = False
    prev = -np.inf
    for _ in range(max_iter):
        eta = np.column_stack([np.zeros(n), D @ B.T])
        logp = log_softmax(eta, axis=1)
        P = np.exp(logp)
        ll = np.sum(Y * logp) / n - 0.5 * ridge * np.sum(B * B * penalty)
        R = (Y - P)[:, 1:]
        grad = (R.T @ D) / n - ridge * B * penalty
        Pk = P[:, 1:]
        H = np.zeros(((K - 1) * q, (K - 1) * q))
        for a in range(K - 1):
            for b in range(a, K - 1):
                c = Pk[:, a] * ((a == b) - Pk[:, b])
                blk = (D * c[:, None]).T @ D / n
                H[a * q:(a + 1) * q, b * q:(b + 1) * q] = blk
                H[b * q:(b + 1) * q, a * q:(a + 1) * q] = blk
        H += ridge * np.kron(np.eye(K - 1), np.diag(penalty))
        H += 1e-12 * np.eye(H.shape[0])
        try:
            step = linalg.solve(H, grad.ravel(), assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = np.linalg.lstsq(H, grad.ravel(), rcond=None)[0]
        t = 1.0
        while t > 1e-8:
            Bn = B + t * step.reshape(K - 1, q)
            etan = np.column_stack([np.zeros(n), D @ Bn.T])
            lln = np.sum(Y * log_softmax(etan, axis=1)) / n - 0.5 * ridge * np.sum(Bn * Bn * penalty)
            if lln >= ll - 1e-14:
                break
            t *= 0.5
        B = Bn
        if np.abs(B).max() > 25.0:
            diverging = True
            break
        if abs(lln - prev) < tol and np.abs(grad).max() < 1e-8:
            break
        prev = lln
    else:
        if np.abs(grad).max() > 1e-6:
            raise ConvergenceError("region-membership model did not converge")
    return B, diverging


def fit_region_membership(dataset, covariate_index=None, ridge=1e-4):
    """Multinomial logistic model of region membership on the covariates.

    The design is ``[1, X]`` (columns standardized internally). When the
    coefficients diverge a :class:`SeparationWarning` is emitted and the
    model is refit with a ridge penalty of ``ridge``.
    """
    X = dataset.pooled_covariates()
    names = list(dataset.covariate_names)
    if covariate_index is not None:
        X = X[:, covariate_index]
        names = [names[k] for k in covariate_index]
    y = np.concatenate([np.full(p.n, p.region_id - 1) for p in dataset.panels])
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    D = np.column_stack([np.ones(len(y)), (X - mu) / sd])
    if np.linalg.matrix_rank(D) < D.shape[1]:
        bad = _collinear_columns(D, ["intercept", *names])
        raise RankDeficiencyError(f"region-membership design is rank deficient; collinear columns: {bad}", bad)
    K = dataset.M
    B, diverging = _fit_multinomial(D, y, K, 0.0)
    used_ridge = 0.0
    if diverging:
        warnings.warn(
            "region membership is (quasi-)separated by the covariates; refitting with "
            f"ridge penalty {ridge:g}", SeparationWarning, stacklevel=2)
        B, _ = _fit_multinomial(D, y, K, ridge)
        used_ridge = ridge
    P = np.exp(log_softmax(np.column_stack([np.zeros(len(y)), D @ B.T]), axis=1))
    probs = {}
    start = 0
    for panel in dataset.panels:
        probs[panel.region_id] = P[start:start + panel.n]
        start += panel.n
    coef = {"B": B, "center": mu, "scale": sd, "names": names}
    return SamplingScoreModel(ESTIMATED, coef, probs,
                              {p.region_id: p.n for p in dataset.panels}, used_ridge)


def ipsw_mixture_target(dataset, membership, target_region=None, overlap_tol=1e-6):
    """IPSW weights per region toward the pooled trial population.

    Weights are ``(n_r / N) / P(R = r | X)``, normalized within region. With
    ``target_region=k`` the target is region ``k`` instead and the weights are
    ``P(R = k | X) / P(R = r | X)``.
    """
    N = sum(membership.sizes.values())
    out = {}
    for panel in dataset.panels:
        r = panel.region_id
        P = membership.probabilities[r]
        own = P[:, r - 1]
        low = np.flatnonzero(own < overlap_tol)
        if low.size:
            warnings.warn(
                f"region {r}: subjects {low.tolist()} have membership probability below "
                f"{overlap_tol:g} (near overlap violation)", OverlapWarning, stacklevel=2)
        num = membership.sizes[r] / N if target_region is None else P[:, target_region - 1]
        out[r] = IpswWeights(_normalize(num / np.maximum(own, 1e-300)), membership.kind)
    return out


def inverse_propensity_factors(panel):
    """``1/pi`` for treated subjects and ``1/(1 - pi)`` for controls."""
    pi = panel.propensity
    return np.where(panel.treatment == 1, 1.0 / pi, 1.0 / (1.0 - pi))
