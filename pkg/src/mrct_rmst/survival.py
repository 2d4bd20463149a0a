"""Weighted Kaplan-Meier curves, RMST, their variances and IPC weights.

Each subject in arm ``z`` carries mass ``a_i = xi_i * q_i`` (sampling weight
times inverse propensity). At every distinct event time ``u`` up to ``t*``:

* ``Y(u)``  weighted at-risk mass ``sum a_i I[U_i >= u]``,
* ``dN(u)`` weighted event mass at ``u``,
* ``W(u) = Y(u)^2 / sum a_i^2 I[U_i >= u]`` (stabilized at-risk mass).
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import EmptyArmError, PositivityError, VarianceTermWarning
from .numerics import normal_quantile


@dataclass(frozen=True)
class StepCurve:
    """Right-continuous step function; ``values[k]`` holds on ``[times[k], times[k+1])``."""

    times: np.ndarray
    values: np.ndarray
    value_at_0: float = 1.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t, side="right") - 1
        v = np.where(k >= 0, self.values[np.maximum(k, 0)] if self.values.size else self.value_at_0,
                     self.value_at_0)
        return v if v.ndim else float(v)

    def left_limit(self, t):
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t, side="left") - 1
        v = np.where(k >= 0, self.values[np.maximum(k, 0)] if self.values.size else self.value_at_0,
                     self.value_at_0)
        return v if v.ndim else float(v)

    def to_rows(self):
        rows = [(0.0, self.value_at_0)]
        rows += list(zip(self.times.tolist(), self.values.tolist()))
        return rows


@dataclass(frozen=True)
class WeightedRiskSet:
    event_times: np.ndarray
    dN: np.ndarray
    Y: np.ndarray
    W: np.ndarray
    dN_jump: np.ndarray


@dataclass(frozen=True)
class RmstEstimate:
    estimate: float
    variance: float
    t_star: float
    region: object = None
    arm_or_contrast: str = "difference"
    estimator: str = "KM"
    weighting: str = "none"

    def ci(self, level=0.95):
        from .inference import confidence_interval
        return confidence_interval(self, level)

    @property
    def se(self):
        return float(np.sqrt(self.variance))


def weighted_risk_set(time, event, mass, t_star):
    """Aggregate weighted counting and at-risk processes at event times ``<= t_star``."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    mass = np.asarray(mass, dtype=float)
    order = np.argsort(time, kind="stable")
    ts, ds, ms = time[order], event[order], mass[order]
    # Reverse cumulative sums give the at-risk mass at each sorted position.
    rc1 = np.cumsum(ms[::-1])[::-1]
    rc2 = np.cumsum((ms * ms)[::-1])[::-1]
    ev = (ds == 1) & (ts <= t_star) & (ms > 0)
    u = np.unique(ts[ev])
    if u.size == 0:
        e = np.empty(0)
        return WeightedRiskSet(e, e, e, e, e)
    first = np.searchsorted(ts, u, side="left")
    Y = rc1[first]
    Y2 = rc2[first]
    dN = np.bincount(np.searchsorted(u, ts[ev]), weights=ms[ev], minlength=u.size)
    W = Y * Y / Y2
    return WeightedRiskSet(u, dN, Y, W, dN.copy())


def _arm_mass(panel, arm, weights, q):
    sel = panel.treatment == arm
    xi = np.ones(panel.n) if weights is None else np.asarray(weights, dtype=float)
    qq = np.ones(panel.n) if q is None else np.asarray(q, dtype=float)
    mass = (xi * qq)[sel]
    if mass.size == 0 or mass.sum() <= 0:
        raise EmptyArmError(f"region {panel.region_id}: arm {arm} has no at-risk mass at time 0")
    return panel.time[sel], panel.event[sel], mass


def km_from_risk_set(rs):
    values = np.cumprod(1.0 - rs.dN / rs.Y) if rs.event_times.size else np.empty(0)
    return StepCurve(rs.event_times, np.clip(values, 0.0, 1.0), 1.0)


def weighted_km_curve(panel, arm, weights=None, q=None, t_star=np.inf):
    """Weighted product-limit curve of arm ``arm`` over event times ``<= t_star``."""
    time, event, mass = _arm_mass(panel, arm, weights, q)
    return km_from_risk_set(weighted_risk_set(time, event, mass, t_star))


def _segment_areas(curve, t_star):
    """Area of each step on ``[times[k], t_star]`` and the initial flat piece."""
    t = curve.times[curve.times <= t_star]
    v = curve.values[: t.size]
    ends = np.append(t[1:], t_star)
    return t, v, v * (ends - t)


def weighted_km_rmst(curve, t_star):
    """Exact area under the step curve on ``[0, t_star]``."""
    t, _, areas = _segment_areas(curve, t_star)
    first = t[0] if t.size else t_star
    return float(curve.value_at_0 * min(first, t_star) + areas.sum())


def _tail_areas(curve, t_star):
    # tail[k] = integral of S from times[k] to t_star
    _, _, areas = _segment_areas(curve, t_star)
    return np.cumsum(areas[::-1])[::-1]


def _variance_terms(rs):
    denom = rs.W * (rs.Y - rs.dN_jump)
    ok = (rs.Y - rs.dN_jump) > 1e-12 * rs.Y
    terms = np.zeros_like(rs.dN)
    terms[ok] = rs.dN[ok] / denom[ok]
    return terms, ok


def km_rmst_variance(rs, curve, t_star):
    """Variance of the weighted KM RMST up to ``t_star``.

    Sum over event times of ``(tail area)^2 * dN / (W (Y - dN))``. Times
    where the event takes the whole risk set are dropped.
    """
    keep = rs.event_times <= t_star
    if not keep.any():
        return 0.0
    tail = _tail_areas(curve, t_star)[: int(keep.sum())]
    terms, ok = _variance_terms(rs)
    terms, ok = terms[keep], ok[keep]
    dropped = (~ok) & (tail > 0)
    if dropped.any():
        warnings.warn(f"dropped {int(dropped.sum())} variance terms with no remaining risk set",
                      VarianceTermWarning, stacklevel=2)
    return float(np.sum(tail * tail * terms))


def km_curve_variance(rs, curve, t):
    """Pointwise variance of the weighted KM curve at ``t``: ``S(t)^2 sum dN / (W (Y - dN))``."""
    keep = rs.event_times <= t
    if not keep.any():
        return 0.0
    terms, ok = _variance_terms(rs)
    s = curve(t)
    if s > 0 and not ok[keep].all():
        warnings.warn("dropped variance terms with no remaining risk set", VarianceTermWarning,
                      stacklevel=2)
    return float(s * s * np.sum(terms[keep]))


def km_arm(panel, arm, weights=None, q=None, t_star=4.0):
    """RMST, its variance and the curve for one arm."""
    time, event, mass = _arm_mass(panel, arm, weights, q)
    rs = weighted_risk_set(time, event, mass, t_star)
    curve = km_from_risk_set(rs)
    return weighted_km_rmst(curve, t_star), km_rmst_variance(rs, curve, t_star), curve


def km_difference(panel, weights=None, q=None, t_star=4.0, estimator="KM", weighting="none"):
    """Weighted KM RMST difference (arm 1 minus arm 0) with variance summed over arms."""
    m1, v1, _ = km_arm(panel, 1, weights, q, t_star)
    m0, v0, _ = km_arm(panel, 0, weights, q, t_star)
    return RmstEstimate(m1 - m0, v1 + v0, t_star, panel.region_id, "difference", estimator, weighting)


def censoring_survival(panel, arm=None):
    """Unweighted KM of the censoring distribution (censorings counted as events).

    Pooled over both arms unless ``arm`` is given.
    """
    sel = np.ones(panel.n, dtype=bool) if arm is None else panel.treatment == arm
    rs = weighted_risk_set(panel.time[sel], 1 - panel.event[sel], np.ones(int(sel.sum())), np.inf)
    return km_from_risk_set(rs)


def ipc_weights(panel, G, t_star):
    """Inverse-probability-of-censoring weights ``delta* / G(Y-)`` with ``Y = min(U, t*)``.

    ``G`` is either one curve or a mapping ``arm -> curve``.
    """
    U = panel.time
    Y = np.minimum(U, t_star)
    observed = ((panel.event == 1) & (U <= t_star)) | (U >= t_star)
    if isinstance(G, dict):
        g = np.where(panel.treatment == 1, G[1].left_limit(Y), G[0].left_limit(Y))
    else:
        g = G.left_limit(Y)
    bad = observed & (g <= 0)
    if bad.any():
        raise PositivityError(
            f"region {panel.region_id}: censoring survival is 0 before {float(Y[bad].min()):.6g}; "
            "censoring support is shorter than t*")
    w = np.zeros(panel.n)
    w[observed] = 1.0 / g[observed]
    return w
