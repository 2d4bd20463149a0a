"""Data-generating mechanism, true estimands and the Monte Carlo driver.

Three regions enroll ``(400, 500, 600)`` subjects from ``X1 ~ U(0, 1)``,
``X2 ~ N(1, 1)`` tilted by a region-specific sampling score. Event times
follow a non-proportional hazard with control baseline ``0.5`` and treated
baseline ``0.15 t^-0.7`` times ``exp(lp)``; censoring is ``Exp(0.1)``.
"""

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import integrate

from .calibration import solve_calibration
from .data import Dataset, GSpec, RegionPanel, evaluate_g
from .errors import MrctError, ScenarioError
from .estimators import augmented_estimate, hajek_estimate
from .ipsw import (KNOWN_LOG_LINEAR, KNOWN_LOGISTIC_NONLINEAR, SamplingScoreModel,
                   fit_region_membership, inverse_propensity_factors, ipsw_from_known_score)
from .numerics import RngStream, gauss_hermite_nodes, gauss_legendre_nodes
from .regression import fit_ipcw_rmst_regression, g_formula_estimate
from .survival import censoring_survival, ipc_weights, km_difference

log = logging.getLogger(__name__)

COVARIATES = ("X1", "X2")

# Sampling-score coefficients (eta0, eta1, eta2) per region.
SCENARIOS = {
    1: (KNOWN_LOG_LINEAR, {1: (-5.0, 0.8, 0.30), 2: (-5.0, 0.7, 0.27), 3: (-5.0, 0.6, 0.25)}),
    2: (KNOWN_LOG_LINEAR, {1: (-5.0, 2.5, 0.50), 2: (-5.0, 2.3, 0.55), 3: (-5.0, 2.0, 0.60)}),
    3: (KNOWN_LOGISTIC_NONLINEAR, {1: (-3.0, 0.6, -0.15), 2: (-3.0, 0.5, -0.10), 3: (-3.0, 0.4, -0.05)}),
    4: (KNOWN_LOGISTIC_NONLINEAR, {1: (-2.3, 3.0, -0.20), 2: (-2.3, 2.5, -0.15), 3: (-2.3, 2.0, -0.10)}),
}

# Log-hazard terms: name -> coefficient. I2, I3 are region indicators.
HAZARD_COEFFICIENTS = {
    "I2": 0.3, "I3": 0.5, "X1": -1.0, "X2": 0.5,
    "Z:I2": 0.3, "Z:I3": 0.5, "Z:X1": -1.0, "Z:X2": -0.5,
    "I2:X1": -0.6, "I2:X2": 0.3, "I3:X1": -1.0, "I3:X2": 0.5,
}

# Cumulative baselines: control 0.5 t, treated 0.15 t^0.3 / 0.3 = 0.5 t^0.3.
CONTROL_RATE = 0.5
TREATED_SCALE = 0.15 / 0.3
TREATED_SHAPE = 0.3

WEIGHTINGS = ("CW", "IPSW-true", "IPSW-est")
ESTIMATORS = ("KM", "GF", "GFmis", "HJ", "AG", "AGmis")
FULL_MENU = ("Naive",) + tuple(f"{w}-{e}" for w in WEIGHTINGS for e in ESTIMATORS)

# Target population moments of g = [X1, X2, X1^2, X2^2] under U(0,1) x N(1,1).
TARGET_MOMENTS = np.array([0.5, 1.0, 1.0 / 3.0, 2.0])

_BATCH = 16384
_MAX_PROPOSALS = 10_000_000


@dataclass(frozen=True)
class ScenarioConfig:
    scenario_id: int = 1
    sampling_kind: str = KNOWN_LOG_LINEAR
    coefficients: dict = field(default_factory=dict)
    sizes: tuple = (400, 500, 600)
    hazard: dict = field(default_factory=lambda: dict(HAZARD_COEFFICIENTS))
    censoring_rate: float = 0.1
    propensity: float = 0.5
    t_star: float = 4.0
    replications: int = 1000
    seed: int = 0

    def __post_init__(self):
        if any(n <= 0 for n in self.sizes):
            raise ScenarioError("region sizes must be positive")
        if self.censoring_rate <= 0 or self.t_star <= 0:
            raise ScenarioError("censoring rate and t* must be positive")
        if not 0 < self.propensity < 1:
            raise ScenarioError("propensity must lie in (0, 1)")
        if set(self.coefficients) != set(range(1, len(self.sizes) + 1)):
            raise ScenarioError("need sampling coefficients for every region")

    @property
    def M(self):
        return len(self.sizes)

    @property
    def sampling_model(self):
        return SamplingScoreModel(self.sampling_kind, dict(self.coefficients))

    def to_dict(self):
        d = asdict(self)
        d["coefficients"] = {str(k): list(v) for k, v in self.coefficients.items()}
        d["sizes"] = list(self.sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "coefficients" in d:
            d["coefficients"] = {int(k): tuple(v) for k, v in d["coefficients"].items()}
        if "sizes" in d:
            d["sizes"] = tuple(d["sizes"])
        return cls(**d)


def scenario(scenario_id, **overrides):
    """Preset scenario 1-4."""
    if scenario_id not in SCENARIOS:
        raise ScenarioError(f"unknown scenario id {scenario_id!r}; expected 1-4")
    kind, coef = SCENARIOS[scenario_id]
    return ScenarioConfig(scenario_id=scenario_id, sampling_kind=kind, coefficients=dict(coef), **overrides)


def linear_predictor(z, r, x1, x2, hazard=HAZARD_COEFFICIENTS):
    i2 = 1.0 if r == 2 else 0.0
    i3 = 1.0 if r == 3 else 0.0
    h = hazard
    return (h["I2"] * i2 + h["I3"] * i3 + h["X1"] * x1 + h["X2"] * x2
            + z * (h["Z:I2"] * i2 + h["Z:I3"] * i3 + h["Z:X1"] * x1 + h["Z:X2"] * x2)
            + i2 * (h["I2:X1"] * x1 + h["I2:X2"] * x2) + i3 * (h["I3:X1"] * x1 + h["I3:X2"] * x2))


def cumulative_baseline(t, z):
    t = np.asarray(t, dtype=float)
    return TREATED_SCALE * t ** TREATED_SHAPE if z == 1 else CONTROL_RATE * t


def event_time_from_uniform(v, z, lp):
    """Invert ``S(t) = exp(-Lambda_z(t) e^lp)`` at ``S = v``."""
    target = -np.log(v) / np.exp(lp)
    z = np.asarray(z)
    treated = (target / TREATED_SCALE) ** (1.0 / TREATED_SHAPE)
    control = target / CONTROL_RATE
    return np.where(z == 1, treated, control)


def sample_covariates(cfg, r, n, rng):
    """Rejection-sample ``n`` covariate rows from ``F`` tilted by ``rho_r``."""
    model = cfg.sampling_model
    gen = rng.generator
    out = []
    have = 0
    proposed = 0
    while have < n:
        if proposed >= _MAX_PROPOSALS:
            raise ScenarioError(f"region {r}: fewer than {n} acceptances in {proposed} proposals")
        x1 = gen.random(_BATCH)
        x2 = gen.normal(1.0, 1.0, _BATCH)
        u = gen.random(_BATCH)
        X = np.column_stack([x1, x2])
        rho = np.minimum(model.score(r, X), 1.0)
        acc = X[u < rho]
        out.append(acc)
        have += acc.shape[0]
        proposed += _BATCH
    return np.vstack(out)[:n]


def generate_region(cfg, r, rng):
    n = cfg.sizes[r - 1]
    X = sample_covariates(cfg, r, n, rng)
    gen = rng.generator
    z = (gen.random(n) < cfg.propensity).astype(int)
    while z.min() == z.max():
        z = (gen.random(n) < cfg.propensity).astype(int)
    v = 1.0 - gen.random(n)  # in (0, 1]
    lp = linear_predictor(z, r, X[:, 0], X[:, 1], cfg.hazard)
    T = event_time_from_uniform(v, z, lp)
    C = gen.exponential(1.0 / cfg.censoring_rate, n)
    U = np.minimum(T, C)
    d = (T <= C).astype(int)
    return RegionPanel(r, U, d, z, X, np.full(n, cfg.propensity), str(r))


def generate_trial(cfg, rng):
    panels = tuple(generate_region(cfg, r, rng) for r in range(1, cfg.M + 1))
    return Dataset(panels, COVARIATES, {r: str(r) for r in range(1, cfg.M + 1)})


@dataclass(frozen=True)
class TrueEstimands:
    mu: dict  # (region, arm) -> mean RMST over the target population
    delta: dict  # region -> RMST difference
    error: float


def true_estimands(cfg, nodes=64, tol=1e-8):
    """Target-population RMST by tensor Gauss quadrature over ``X`` and adaptive ``t``.

    ``error`` combines the inner adaptive-quadrature error estimate with the
    change when the outer rule is refined by 32 nodes.
    """
    def compute(k):
        u, wu = gauss_legendre_nodes(k, 0.0, 1.0)
        h, wh = gauss_hermite_nodes(k)
        X1, X2 = np.meshgrid(u, h + 1.0, indexing="ij")
        W = np.outer(wu, wh).ravel()
        x1, x2 = X1.ravel(), X2.ravel()
        mu, err = {}, 0.0
        for r in range(1, cfg.M + 1):
            for z in (0, 1):
                e = np.exp(linear_predictor(z, r, x1, x2, cfg.hazard))
                f = lambda t, e=e, z=z: np.exp(-cumulative_baseline(t, z) * e)
                val, ierr = integrate.quad_vec(f, 0.0, cfg.t_star, epsabs=tol, epsrel=tol)
                mu[(r, z)] = float(W @ val)
                err = max(err, float(ierr))
        return mu, err

    mu, err = compute(nodes)
    mu_fine, _ = compute(nodes + 32)
    err += max(abs(mu[k] - mu_fine[k]) for k in mu)
    delta = {r: mu[(r, 1)] - mu[(r, 0)] for r in range(1, cfg.M + 1)}
    return TrueEstimands(mu, delta, err)


# --- one replication ------------------------------------------------------

def _estimator_set(menu):
    return {name for name in menu}


def analyze_replication(data, cfg, menu=FULL_MENU, target=TARGET_MOMENTS):
    """All requested estimates for one simulated trial.

    Returns a list of ``(estimator, region, estimate, variance, error)``.
    """
    t = cfg.t_star
    wanted = _estimator_set(menu)
    g_cal = GSpec.moments(COVARIATES, 2)
    g_out = GSpec.parse(["X1", "X2"], COVARIATES)
    g_mis = g_out.drop("X2")
    records = []

    weight_sets = {}
    if any(m.startswith("IPSW-est") for m in wanted):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                mem = fit_region_membership(data)
            N = sum(p.n for p in data.panels)
            weight_sets["IPSW-est"] = {
                p.region_id: (p.n / N) / mem.probabilities[p.region_id][:, p.region_id - 1]
                for p in data.panels}
        except MrctError as exc:
            weight_sets["IPSW-est"] = exc

    for panel in data.panels:
        r = panel.region_id
        q = inverse_propensity_factors(panel)

        def run(name, fn):
            if name not in wanted:
                return
            try:
                e = fn()
                records.append((name, r, e.estimate, e.variance, ""))
            except MrctError as exc:
                records.append((name, r, np.nan, np.nan, f"{type(exc).__name__}: {exc}"))

        run("Naive", lambda: km_difference(panel, None, None, t, "naive", "none"))

        w_sets = {}
        if any(m.startswith("CW") for m in wanted):
            try:
                G = evaluate_g(g_cal, panel.covariates)
                w_sets["CW"] = solve_calibration(G, target, names=g_cal.names).weights
            except MrctError as exc:
                w_sets["CW"] = exc
        if any(m.startswith("IPSW-true") for m in wanted):
            try:
                w_sets["IPSW-true"] = ipsw_from_known_score(panel, cfg.sampling_model).weights
            except MrctError as exc:
                w_sets["IPSW-true"] = exc
        if "IPSW-est" in weight_sets:
            ws = weight_sets["IPSW-est"]
            w_sets["IPSW-est"] = ws if isinstance(ws, Exception) else ws[r] / ws[r].sum()

        try:
            ipc = ipc_weights(panel, censoring_survival(panel), t)
        except MrctError as exc:
            ipc = exc
        fits = {}
        for key, spec in (("", g_out), ("mis", g_mis)):
            try:
                fits[key] = ipc if isinstance(ipc, Exception) else fit_ipcw_rmst_regression(
                    panel, spec, t, "identity", ipc_w=ipc)
            except MrctError as exc:
                fits[key] = exc

        def need(obj):
            if isinstance(obj, Exception):
                raise obj
            return obj

        for wname in WEIGHTINGS:
            if wname not in w_sets:
                continue
            xi = w_sets[wname]
            run(f"{wname}-KM", lambda: km_difference(panel, need(xi), q, t, "KM", wname))
            run(f"{wname}-HJ", lambda: hajek_estimate(panel, need(xi), q, need(ipc), t, wname))
            for suffix, key in (("", ""), ("mis", "mis")):
                run(f"{wname}-GF{suffix}",
                    lambda: g_formula_estimate(need(fits[key]), panel, need(xi), t, wname))
                run(f"{wname}-AG{suffix}",
                    lambda: augmented_estimate(panel, need(xi), q, need(ipc), need(fits[key]), t, wname))
    return records


def _replicate_chunk(args):
    cfg, indices, menu = args
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for i in indices:
            data = generate_trial(cfg, RngStream(cfg.seed, i))
            for rec in analyze_replication(data, cfg, menu):
                out.append((i, *rec))
    return out


def run_replications(cfg, menu=FULL_MENU, workers=1, chunk=10):
    """Per-replication estimates as a data frame, ordered by replication index."""
    idx = list(range(cfg.replications))
    chunks = [(cfg, idx[k:k + chunk], tuple(menu)) for k in range(0, len(idx), chunk)]
    if workers <= 1:
        parts = [_replicate_chunk(c) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_replicate_chunk, chunks))
    rows = [row for part in parts for row in part]
    return pd.DataFrame(rows, columns=["replication", "estimator", "region", "estimate",
                                       "variance", "error"])


def summarize(raw, truth, level=0.95, menu=FULL_MENU):
    """Bias, empirical SD, mean SE and CI coverage per (estimator, region)."""
    from .numerics import normal_quantile
    zq = normal_quantile(0.5 * (1 + level))
    rows = []
    order = {name: k for k, name in enumerate(menu)}
    for (name, r), grp in sorted(raw.groupby(["estimator", "region"], sort=False),
                                 key=lambda kv: (order.get(kv[0][0], 1e9), kv[0][1])):
        grp = grp.sort_values("replication", kind="stable")
        ok = grp["error"] == ""
        est = grp.loc[ok, "estimate"].to_numpy()
        se = np.sqrt(grp.loc[ok, "variance"].to_numpy())
        tr = truth.delta[r]
        n_ok = est.size
        n_fail = int((~ok).sum())
        covered = np.abs(est - tr) <= zq * se
        rows.append({
            "estimator": name, "region": int(r), "truth": tr, "n_ok": n_ok, "n_failed": n_fail,
            "mean_estimate": float(est.mean()) if n_ok else np.nan,
            "bias": float(est.mean() - tr) if n_ok else np.nan,
            "empirical_sd": float(est.std(ddof=1)) if n_ok > 1 else np.nan,
            "mean_se": float(se.mean()) if n_ok else np.nan,
            "coverage": float(covered.mean()) if n_ok else np.nan,
        })
        if n_fail > 0.05 * (n_ok + n_fail):
            log.warning("%s region %s failed in %d of %d replications", name, r, n_fail, n_ok + n_fail)
            warnings.warn(f"{name} region {r}: {n_fail} of {n_ok + n_fail} replications failed")
    return pd.DataFrame(rows)


def run_monte_carlo(cfg, menu=FULL_MENU, workers=1, truth=None):
    """Run ``cfg.replications`` trials; return ``(summary, raw)`` data frames."""
    unknown = set(menu) - set(FULL_MENU)
    if unknown:
        raise ScenarioError(f"unknown estimators in menu: {sorted(unknown)}")
    truth = truth or true_estimands(cfg)
    raw = run_replications(cfg, menu, workers)
    return summarize(raw, truth, menu=menu), raw


def large_sample_balance(cfg, per_region=30000, seed=0):
    """Unweighted SMDs of X1 and X2 between large regional samples and the target population.

    The target side uses the exact population moments of ``U(0, 1) x N(1, 1)``.
    """
    from .diagnostics import smd_to_moments
    big = replace(cfg, sizes=tuple(per_region for _ in cfg.sizes))
    rng = RngStream(seed, 0)
    moments = {"X1": (0.5, 1.0 / 12.0), "X2": (1.0, 1.0)}
    out = {}
    for r in range(1, cfg.M + 1):
        X = sample_covariates(big, r, per_region, rng)
        for k, name in enumerate(COVARIATES):
            out[(name, r)] = smd_to_moments(X[:, k], None, *moments[name])
    return out
