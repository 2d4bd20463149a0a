"""Command-line interface: ``mrct-rmst analyze | simulate | diagnose``."""

import argparse
import hashlib
import json
import logging
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .calibration import SolverOptions, calibrate_region
from .data import (CalibrationTarget, GSpec, default_g_spec, load_dataset, target_from_pooled,
                   target_from_region)
from .diagnostics import balance_report, balance_report_moments
from .errors import ConfigError, MrctError
from .estimators import augmented_estimate, hajek_estimate
from .inference import confidence_interval, consistency_test, global_estimate
from .ipsw import fit_region_membership, inverse_propensity_factors, ipsw_mixture_target
from .numerics import RNG_ALGORITHM
from .regression import fit_ipcw_rmst_regression, g_formula_estimate
from .simulation import FULL_MENU, ScenarioConfig, run_monte_carlo, scenario, true_estimands
from .survival import censoring_survival, ipc_weights, km_difference, weighted_km_curve

log = logging.getLogger("mrct_rmst")

FLOAT_FORMAT = "%.17g"
ESTIMATE_COLUMNS = ["estimator", "region", "estimate", "variance", "ci_low", "ci_high"]

DEFAULTS = {
    "input": None,
    "schema": None,
    "tstar": None,
    "weighting": "both",
    "gspec": None,
    "outcome_gspec": None,
    "link": "identity",
    "misspecify": None,
    "target": "pooled",
    "scenario": None,
    "scenario_file": None,
    "reps": 1000,
    "seed": 0,
    "workers": 1,
    "out": "out",
    "level": 0.95,
    "tol": 1e-9,
    "max_iter": 200,
    "censoring": "pooled",
    "estimators": None,
}


@dataclass
class RunConfig:
    command: str
    values: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def canonical(self):
        return json.dumps({"command": self.command, **self.values}, sort_keys=True, default=str)

    def digest(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _read_config_file(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml"):
        import yaml
        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return {k.replace("-", "_"): v for k, v in data.items()}


def resolve_config(command, args):
    """Defaults < config file < explicitly passed flags."""
    values = dict(DEFAULTS)
    if getattr(args, "config", None):
        file_values = _read_config_file(args.config)
        unknown = set(file_values) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(file_values)
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    cfg = RunConfig(command, values)
    if command in ("analyze", "diagnose"):
        if not cfg.input:
            raise ConfigError("--input is required")
        if command == "analyze" and (cfg.tstar is None or float(cfg.tstar) <= 0):
            raise ConfigError("--tstar must be a positive number")
        if cfg.weighting not in ("cw", "ipsw", "both"):
            raise ConfigError("--weighting must be cw, ipsw or both")
        if cfg.link not in ("identity", "log"):
            raise ConfigError("--link must be identity or log")
        t = str(cfg.target)
        if not (t == "pooled" or t.startswith("region:") or t.startswith("moments:")):
            raise ConfigError("--target must be pooled, region:<id> or moments:<file>")
    return cfg


def _parse_schema(value):
    if value is None:
        return None
    if isinstance(value, dict):
        return value
    p = Path(value)
    if p.is_file():
        return json.loads(p.read_text(encoding="utf-8"))
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        pass
    schema = {}
    for part in str(value).split(";"):
        if not part.strip():
            continue
        k, _, v = part.partition("=")
        schema[k.strip()] = [c.strip() for c in v.split(",")] if k.strip() == "covariates" else v.strip()
    return schema


def _split_terms(value):
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        return list(value)
    return [s.strip() for s in str(value).split(",") if s.strip()]


def _write_csv(frame, path):
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def _write_manifest(out, cfg, extra=None):
    # the output location does not affect results, so it stays out of the hash
    cfg = RunConfig(cfg.command, {k: v for k, v in cfg.values.items() if k != "out"})
    manifest = {
        "artifact": "mrct_rmst",
        "version": __version__,
        "command": cfg.command,
        "config": json.loads(cfg.canonical()),
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "rng": RNG_ALGORITHM,
        "numpy": np.__version__,
        **(extra or {}),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


# --- analysis pieces ---------------------------------------------------------

def _target(cfg, dataset, g_spec):
    t = str(cfg.target)
    if t == "pooled":
        return target_from_pooled(dataset, g_spec), None
    if t.startswith("region:"):
        label = t.split(":", 1)[1]
        ids = {v: k for k, v in dataset.region_labels.items()}
        if label in ids:
            rid = ids[label]
        else:
            try:
                rid = int(label)
            except ValueError:
                raise ConfigError(f"unknown target region {label!r}") from None
        if not 1 <= rid <= dataset.M:
            raise ConfigError(f"unknown target region {label!r}")
        return target_from_region(dataset, g_spec, rid), rid
    path = Path(t.split(":", 1)[1])
    if not path.is_file():
        raise ConfigError(f"moments file not found: {path}")
    moments = json.loads(path.read_text(encoding="utf-8"))
    missing = [n for n in g_spec.names if n not in moments]
    if missing:
        raise ConfigError(f"moments file lacks {missing}")
    return CalibrationTarget(g_spec, [moments[n] for n in g_spec.names]), "moments"


def _weights(cfg, dataset, target, target_region):
    """``{tag: {region: weights or exception}}`` for the requested weightings."""
    out = {}
    if cfg.weighting in ("cw", "both"):
        opts = SolverOptions(tol=float(cfg.tol), max_iter=int(cfg.max_iter))
        cw = {}
        for panel in dataset.panels:
            try:
                cw[panel.region_id] = calibrate_region(panel, target, opts).weights
            except MrctError as exc:
                cw[panel.region_id] = exc
        out["CW"] = cw
    if cfg.weighting in ("ipsw", "both"):
        if target_region == "moments":
            exc = ConfigError("IPSW needs individual-level target data; unavailable with a moments file")
            out["IPSW"] = {p.region_id: exc for p in dataset.panels}
        else:
            try:
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always")
                    mem = fit_region_membership(dataset)
                    ws = ipsw_mixture_target(dataset, mem, target_region)
                for w in caught:
                    log.warning("ipsw: %s", w.message)
                out["IPSW"] = {r: v.weights for r, v in ws.items()}
            except MrctError as exc:
                out["IPSW"] = {p.region_id: exc for p in dataset.panels}
    return out


def _row(est, name, region, level):
    lo, hi = confidence_interval(est, level)
    return {"estimator": name, "region": region, "estimate": est.estimate,
            "variance": est.variance, "ci_low": lo, "ci_high": hi, "status": "ok"}


def _fail(name, region, exc, module):
    msg = f"{module}: {type(exc).__name__}: {exc}"
    return {"estimator": name, "region": region, "estimate": np.nan, "variance": np.nan,
            "ci_low": np.nan, "ci_high": np.nan, "status": msg}


def _outcome_spec(cfg, dataset):
    terms = _split_terms(cfg.outcome_gspec)
    spec = GSpec.parse(terms, dataset.covariate_names) if terms else GSpec.parse(
        list(dataset.covariate_names), dataset.covariate_names)
    if cfg.misspecify:
        m = str(cfg.misspecify)
        if not m.startswith("drop:"):
            raise ConfigError("--misspecify must look like drop:<covariate>")
        spec = spec.drop(m.split(":", 1)[1])
    return spec


def analyze_dataset(cfg, dataset):
    """All estimates, consistency tests, balance rows and curves for one dataset."""
    t_star = float(cfg.tstar)
    level = float(cfg.level)
    g_terms = _split_terms(cfg.gspec)
    g_spec = GSpec.parse(g_terms, dataset.covariate_names) if g_terms else default_g_spec(dataset)
    target, target_region = _target(cfg, dataset, g_spec)
    out_spec = _outcome_spec(cfg, dataset)
    weight_sets = _weights(cfg, dataset, target, target_region)
    label = dataset.region_labels

    rows, curves = [], []
    for panel in dataset.panels:
        r = panel.region_id
        region = label.get(r, str(r))
        q = inverse_propensity_factors(panel)
        try:
            rows.append(_row(km_difference(panel, None, None, t_star, "naive", "none"), "Naive", region, level))
        except MrctError as exc:
            rows.append(_fail("Naive", region, exc, "survival"))
        try:
            G = censoring_survival(panel) if cfg.censoring == "pooled" else {
                z: censoring_survival(panel, z) for z in (0, 1)}
            ipc = ipc_weights(panel, G, t_star)
            fit = fit_ipcw_rmst_regression(panel, out_spec, t_star, cfg.link, ipc_w=ipc)
        except MrctError as exc:
            ipc = fit = exc
        for tag in ("none", *weight_sets):
            xi = None if tag == "none" else weight_sets[tag][r]
            if isinstance(xi, Exception):
                continue
            for arm in (0, 1):
                curve = weighted_km_curve(panel, arm, xi, q if xi is not None else None, t_star)
                for tt, v in curve.to_rows():
                    curves.append({"weighting": tag, "region": region, "arm": arm, "time": tt, "survival": v})
        for tag, by_region in weight_sets.items():
            xi = by_region[r]
            calls = [
                ("KM", "survival", lambda: km_difference(panel, xi, q, t_star, "KM", tag)),
                ("GF", "regression", lambda: g_formula_estimate(fit, panel, xi, t_star, tag)),
                ("HJ", "estimators", lambda: hajek_estimate(panel, xi, q, ipc, t_star, tag)),
                ("AG", "estimators", lambda: augmented_estimate(panel, xi, q, ipc, fit, t_star, tag)),
            ]
            for est_name, module, fn in calls:
                name = f"{tag}-{est_name}"
                if isinstance(xi, Exception):
                    rows.append(_fail(name, region, xi, "weights-calibration" if tag == "CW" else "weights-ipsw"))
                    continue
                if est_name in ("GF", "HJ", "AG") and isinstance(fit, Exception):
                    rows.append(_fail(name, region, fit, "survival/regression"))
                    continue
                try:
                    rows.append(_row(fn(), name, region, level))
                except MrctError as exc:
                    rows.append(_fail(name, region, exc, module))
    estimates = pd.DataFrame(rows, columns=ESTIMATE_COLUMNS + ["status"])

    tests = []
    if dataset.M >= 2:
        for name, grp in estimates.groupby("estimator", sort=False):
            base = {"estimator": name, "statistic": np.nan, "df": dataset.M - 1, "p_value": np.nan,
                    "global_estimate": np.nan, "global_variance": np.nan, "status": "ok"}
            if (grp["status"] != "ok").any():
                base["status"] = "skipped: some regional estimates failed"
            else:
                ests = [_as_estimate(row, name, t_star) for row in grp.itertuples()]
                try:
                    res = consistency_test(ests)
                    glob = global_estimate(ests)
                    base.update(statistic=res.statistic, p_value=res.p_value,
                                global_estimate=glob.estimate, global_variance=glob.variance)
                except MrctError as exc:
                    base["status"] = f"inference: {type(exc).__name__}: {exc}"
            tests.append(base)
    consistency = pd.DataFrame(tests, columns=["estimator", "statistic", "df", "p_value", "global_estimate",
                                               "global_variance", "status"])
    balance = _balance(dataset, weight_sets, target, target_region)
    return estimates, consistency, balance, pd.DataFrame(curves)


def _as_estimate(row, name, t_star):
    from .survival import RmstEstimate
    return RmstEstimate(row.estimate, row.variance, t_star, row.region, "difference", name, "")


def _balance(dataset, weight_sets, target, target_region):
    sets = {"none": None}
    for tag, by_region in weight_sets.items():
        if not any(isinstance(w, Exception) for w in by_region.values()):
            sets[tag] = by_region
    if target_region == "moments":
        names = target.g_spec.names
        means = {n: v for n, v in zip(names, target.g_tilde) if n in dataset.covariate_names}
        second = {n[:-2]: v for n, v in zip(names, target.g_tilde) if n.endswith("^2")}
        return balance_report_moments(dataset, means, second, sets).to_frame()
    if target_region is None:
        target_X = dataset.pooled_covariates()
    else:
        target_X = dataset.panel(target_region).covariates
    frame = balance_report(dataset, target_X, sets).to_frame()
    frame["region"] = frame["region"].map(lambda r: dataset.region_labels.get(r, str(r)))
    return frame


# --- commands ----------------------------------------------------------------

def cmd_analyze(cfg):
    dataset = load_dataset(cfg.input, _parse_schema(cfg.schema))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    estimates, consistency, balance, curves = analyze_dataset(cfg, dataset)
    _write_csv(estimates, out / "estimates.csv")
    _write_csv(consistency, out / "consistency.csv")
    _write_csv(balance, out / "balance.csv")
    _write_csv(curves, out / "curves.csv")
    _write_manifest(out, cfg, {"region_labels": dataset.region_labels})
    failed = estimates[estimates["status"] != "ok"]
    for row in failed.itertuples():
        print(f"error [{row.estimator}, region {row.region}] {row.status}", file=sys.stderr)
    print(estimates.to_string(index=False))
    return 0 if failed.empty else 1


def cmd_diagnose(cfg):
    dataset = load_dataset(cfg.input, _parse_schema(cfg.schema))
    target_kind = str(cfg.target)
    if dataset.M < 2 and not target_kind.startswith("moments:"):
        raise ConfigError("diagnose needs at least two regions or a moments-file target")
    g_terms = _split_terms(cfg.gspec)
    g_spec = GSpec.parse(g_terms, dataset.covariate_names) if g_terms else default_g_spec(dataset)
    target, target_region = _target(cfg, dataset, g_spec)
    weight_sets = _weights(cfg, dataset, target, target_region)
    balance = _balance(dataset, weight_sets, target, target_region)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(balance, out / "balance.csv")
    _write_manifest(out, cfg, {"region_labels": dataset.region_labels})
    print(balance.to_string(index=False))
    failed = [(tag, r, w) for tag, by in weight_sets.items() for r, w in by.items() if isinstance(w, Exception)]
    for tag, r, exc in failed:
        print(f"error [{tag}, region {r}] {type(exc).__name__}: {exc}", file=sys.stderr)
    return 0 if not failed else 1


def _scenario_config(cfg):
    if cfg.scenario_file:
        data = _read_config_file(cfg.scenario_file)
        base = ScenarioConfig.from_dict(data)
        return ScenarioConfig.from_dict({**base.to_dict(), "replications": int(cfg.reps), "seed": int(cfg.seed)})
    if cfg.scenario is None:
        raise ConfigError("--scenario or --scenario-file is required")
    try:
        sid = int(cfg.scenario)
    except (TypeError, ValueError):
        raise ConfigError(f"unknown scenario id {cfg.scenario!r}") from None
    if sid not in (1, 2, 3, 4):
        raise ConfigError(f"unknown scenario id {sid}; expected 1-4")
    return scenario(sid, replications=int(cfg.reps), seed=int(cfg.seed))


def cmd_simulate(cfg):
    sc = _scenario_config(cfg)
    menu = tuple(_split_terms(cfg.estimators) or FULL_MENU)
    bad = set(menu) - set(FULL_MENU)
    if bad:
        raise ConfigError(f"unknown estimators {sorted(bad)}")
    truth = true_estimands(sc)
    summary, raw = run_monte_carlo(sc, menu, int(cfg.workers), truth)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(summary, out / "summary.csv")
    _write_csv(raw, out / "estimates.csv")
    truth_rows = [{"region": r, "mu_0": truth.mu[(r, 0)], "mu_1": truth.mu[(r, 1)], "delta": d}
                  for r, d in truth.delta.items()]
    _write_csv(pd.DataFrame(truth_rows), out / "truth.csv")
    # worker count does not affect results, so it is left out of the manifest hash
    values = {k: v for k, v in cfg.values.items() if k != "workers"}
    _write_manifest(out, RunConfig(cfg.command, values), {"scenario": sc.to_dict()})
    print(summary.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    return 0 if int(summary["n_failed"].sum()) == 0 else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="mrct-rmst", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML/JSON config file; explicit flags override it")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("-v", "--verbose", action="store_true")

    def data_opts(p):
        p.add_argument("--input", help="CSV input file")
        p.add_argument("--schema", help="JSON file/string or 'time=U;event=d;covariates=a,b'")
        p.add_argument("--weighting", choices=["cw", "ipsw", "both"])
        p.add_argument("--gspec", help="comma-separated calibration terms, e.g. 'age,age^2,sex'")
        p.add_argument("--target", help="pooled | region:<id> | moments:<file.json>")
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iter", dest="max_iter", type=int)

    a = sub.add_parser("analyze", help="estimate regional RMST differences")
    common(a)
    data_opts(a)
    a.add_argument("--tstar", type=float)
    a.add_argument("--link", choices=["identity", "log"])
    a.add_argument("--outcome-gspec", dest="outcome_gspec")
    a.add_argument("--misspecify", help="drop:<covariate>")
    a.add_argument("--level", type=float)
    a.add_argument("--censoring", choices=["pooled", "arm"])

    s = sub.add_parser("simulate", help="Monte Carlo study")
    common(s)
    s.add_argument("--scenario", type=int)
    s.add_argument("--scenario-file", dest="scenario_file")
    s.add_argument("--reps", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--estimators", help="comma-separated subset of the estimator menu")

    d = sub.add_parser("diagnose", help="covariate balance before/after weighting")
    common(d)
    data_opts(d)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.command, args)
        handler = {"analyze": cmd_analyze, "simulate": cmd_simulate, "diagnose": cmd_diagnose}[args.command]
        return handler(cfg)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MrctError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
