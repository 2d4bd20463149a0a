"""Weighted absolute standardized mean differences (covariate balance)."""

from dataclasses import dataclass, field

import numpy as np

UNDEFINED = float("nan")


def _wmean(x, w):
    return np.sum(w * x) / np.sum(w)


def weighted_variance(x, w):
    """Reliability-weighted sample variance ``sum w / ((sum w)^2 - sum w^2) * sum w (x - xbar)^2``."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    sw = w.sum()
    denom = sw * sw - np.sum(w * w)
    if x.size < 2 or denom <= 0:
        return UNDEFINED
    return float(sw / denom * np.sum(w * (x - _wmean(x, w)) ** 2))


def weighted_smd_continuous(x1, w1, x2, w2):
    """``|mean1 - mean2| / sqrt(s1^2/2 + s2^2/2)``; NaN when undefined."""
    x1, x2 = np.asarray(x1, dtype=float), np.asarray(x2, dtype=float)
    w1 = np.ones_like(x1) if w1 is None else np.asarray(w1, dtype=float)
    w2 = np.ones_like(x2) if w2 is None else np.asarray(w2, dtype=float)
    s1, s2 = weighted_variance(x1, w1), weighted_variance(x2, w2)
    diff = abs(_wmean(x1, w1) - _wmean(x2, w2))
    pooled = 0.5 * (s1 + s2)
    if not np.isfinite(pooled):
        return UNDEFINED
    if pooled <= 0:
        return 0.0 if diff == 0 else UNDEFINED
    return float(diff / np.sqrt(pooled))


def weighted_smd_binary(x1, w1, x2, w2):
    """``|p1 - p2| / sqrt(p1(1-p1)/2 + p2(1-p2)/2)`` with weighted prevalences."""
    x1, x2 = np.asarray(x1, dtype=float), np.asarray(x2, dtype=float)
    w1 = np.ones_like(x1) if w1 is None else np.asarray(w1, dtype=float)
    w2 = np.ones_like(x2) if w2 is None else np.asarray(w2, dtype=float)
    p1, p2 = _wmean(x1, w1), _wmean(x2, w2)
    return _smd_from_prevalence(p1, p2)


def _smd_from_prevalence(p1, p2):
    denom = 0.5 * p1 * (1 - p1) + 0.5 * p2 * (1 - p2)
    if denom <= 0:
        return 0.0 if p1 == p2 else UNDEFINED
    return float(abs(p1 - p2) / np.sqrt(denom))


def is_binary(x):
    return bool(np.all(np.isin(np.asarray(x), (0.0, 1.0))))


@dataclass
class BalanceReport:
    rows: list = field(default_factory=list)  # (covariate, region, weighting, smd)

    def to_frame(self):
        import pandas as pd
        return pd.DataFrame(self.rows, columns=["covariate", "region", "weighting", "smd"])

    def get(self, covariate, region, weighting):
        for c, r, w, d in self.rows:
            if (c, r, w) == (covariate, region, weighting):
                return d
        raise KeyError((covariate, region, weighting))


def balance_report(dataset, target_X, weight_sets, binary=None):
    """SMD of every covariate between each weighted region and the target sample.

    Parameters
    ----------
    dataset : Dataset
    target_X : ndarray, shape (m, p)
        Target sample, compared with unit weights.
    weight_sets : dict
        ``{weighting_tag: {region_id: weights}}``; ``None`` weights mean unit.
    binary : sequence of bool, optional
        Per-covariate override of the {0, 1}-support detection.
    """
    target_X = np.asarray(target_X, dtype=float)
    names = dataset.covariate_names
    if binary is None:
        binary = [is_binary(np.concatenate([dataset.pooled_covariates()[:, k], target_X[:, k]]))
                  for k in range(len(names))]
    report = BalanceReport()
    for tag, by_region in weight_sets.items():
        for panel in dataset.panels:
            w = by_region.get(panel.region_id) if by_region is not None else None
            for k, name in enumerate(names):
                fn = weighted_smd_binary if binary[k] else weighted_smd_continuous
                d = fn(panel.covariates[:, k], w, target_X[:, k], None)
                report.rows.append((name, panel.region_id, tag, d))
    return report


def smd_to_moments(x, w, mean, var=None, binary=False):
    """SMD of a weighted sample against known target moments.

    ``var`` defaults to the sample's own weighted variance (binary: ``p(1-p)``).
    """
    x = np.asarray(x, dtype=float)
    w = np.ones_like(x) if w is None else np.asarray(w, dtype=float)
    if binary:
        return _smd_from_prevalence(_wmean(x, w), mean)
    s_r = weighted_variance(x, w)
    s_t = s_r if var is None else max(var, 0.0)
    pooled = 0.5 * (s_r + s_t)
    diff = abs(_wmean(x, w) - mean)
    if not np.isfinite(pooled):
        return UNDEFINED
    if pooled <= 0:
        return 0.0 if diff == 0 else UNDEFINED
    return float(diff / np.sqrt(pooled))


def balance_report_moments(dataset, means, second_moments, weight_sets, binary=None):
    """Balance against target moments when no target sample is available.

    The target variance is ``E[X^2] - E[X]^2`` when the second moment is
    known, else the region's own variance is reused.
    """
    names = dataset.covariate_names
    X = dataset.pooled_covariates()
    if binary is None:
        binary = [is_binary(X[:, k]) for k in range(len(names))]
    report = BalanceReport()
    for tag, by_region in weight_sets.items():
        for panel in dataset.panels:
            w = by_region.get(panel.region_id) if by_region is not None else None
            for k, name in enumerate(names):
                m = means.get(name)
                if m is None:
                    d = UNDEFINED
                else:
                    m2 = second_moments.get(name)
                    var = None if m2 is None else m2 - m * m
                    d = smd_to_moments(panel.covariates[:, k], w, m, var, binary[k])
                report.rows.append((name, panel.region_id, tag, d))
    return report
