import json

import numpy as np
import pandas as pd
import pytest

from mrct_rmst.cli import main
from mrct_rmst.data import write_dataset
from mrct_rmst.numerics import RngStream
from mrct_rmst.simulation import generate_trial, scenario


@pytest.fixture
def trial_csv(tmp_path):
    data = generate_trial(scenario(1), RngStream(4, 0))
    path = tmp_path / "trial.csv"
    write_dataset(data, path)
    return path


@pytest.fixture
def null_csv(tmp_path):
    # Two regions drawn i.i.d. from one law
    r = np.random.default_rng(8)
    n = 800
    X = np.column_stack([r.random(n), r.normal(1, 1, n)])
    z = r.integers(0, 2, n)
    T = r.exponential(1 / (0.5 * np.exp(-X[:, 0] + 0.3 * X[:, 1] - 0.4 * z)))
    C = r.exponential(10, n)
    frame = pd.DataFrame({"time": np.minimum(T, C), "event": (T <= C).astype(int), "treatment": z,
                          "region": np.repeat(["A", "B"], n // 2), "X1": X[:, 0], "X2": X[:, 1]})
    path = tmp_path / "null.csv"
    frame.to_csv(path, index=False)
    return path


def test_analyze_writes_all_outputs(trial_csv, tmp_path, capsys):
    out = tmp_path / "res"
    code = main(["analyze", "--input", str(trial_csv), "--tstar", "4", "--out", str(out)])
    assert code == 0
    est = pd.read_csv(out / "estimates.csv")
    assert {"estimator", "region", "estimate", "variance", "ci_low", "ci_high", "status"} <= set(est.columns)
    assert (est["status"] == "ok").all()
    assert {"CW-KM", "CW-HJ", "CW-GF", "CW-AG", "IPSW-KM"} <= set(est["estimator"])
    cons = pd.read_csv(out / "consistency.csv")
    assert ((cons["p_value"] >= 0) & (cons["p_value"] <= 1)).all()
    bal = pd.read_csv(out / "balance.csv")
    assert bal.loc[bal.weighting == "CW", "smd"].max() < 1e-6
    assert (out / "curves.csv").is_file()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["tstar"] == 4.0 and len(manifest["config_sha256"]) == 64


def test_null_consistency_smoke(null_csv, tmp_path):
    out = tmp_path / "null"
    assert main(["analyze", "--input", str(null_csv), "--tstar", "4", "--out", str(out)]) == 0
    cons = pd.read_csv(out / "consistency.csv")
    assert (cons["p_value"] > 0.001).all()


def test_region_target_self_calibrates(trial_csv, tmp_path):
    out = tmp_path / "r2"
    code = main(["diagnose", "--input", str(trial_csv), "--target", "region:2", "--weighting", "cw",
                 "--out", str(out)])
    assert code == 0
    bal = pd.read_csv(out / "balance.csv")
    cw = bal[(bal.weighting == "CW") & (bal.region.astype(str) == "2")]
    assert len(cw) == 2 and cw["smd"].max() < 1e-6


def test_moments_target(trial_csv, tmp_path):
    mfile = tmp_path / "m.json"
    mfile.write_text(json.dumps({"X1": 0.5, "X2": 1.0, "X1^2": 1 / 3, "X2^2": 2.0}))
    out = tmp_path / "m"
    code = main(["diagnose", "--input", str(trial_csv), "--target", f"moments:{mfile}",
                 "--weighting", "cw", "--out", str(out)])
    assert code == 0
    bal = pd.read_csv(out / "balance.csv")
    assert bal.loc[bal.weighting == "CW", "smd"].max() < 1e-6


def test_missing_input(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    assert main(["analyze", "--input", str(missing), "--tstar", "4"]) != 0
    assert str(missing) in capsys.readouterr().err


def test_unknown_scenario(tmp_path, capsys):
    assert main(["simulate", "--scenario", "9", "--reps", "2", "--out", str(tmp_path)]) != 0
    assert "scenario" in capsys.readouterr().err


def test_config_file_and_flag_precedence(trial_csv, tmp_path):
    cfgfile = tmp_path / "c.yaml"
    cfgfile.write_text(f"input: {trial_csv}\ntstar: 2\nweighting: cw\n")
    out = tmp_path / "o"
    assert main(["analyze", "--config", str(cfgfile), "--tstar", "3", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["tstar"] == 3.0
    assert manifest["config"]["weighting"] == "cw"
    bad = tmp_path / "bad.yaml"
    bad.write_text("colour: red\n")
    assert main(["analyze", "--config", str(bad), "--input", str(trial_csv), "--tstar", "4"]) == 2


def test_simulate_twice_identical(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"s{k}"
        code = main(["simulate", "--scenario", "1", "--reps", "3", "--seed", "7",
                     "--estimators", "Naive,CW-KM", "--out", str(out)])
        assert code == 0
        outs.append(out)
    for name in ("summary.csv", "estimates.csv", "truth.csv", "manifest.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_failed_estimator_reported_with_status(tmp_path, capsys):
    # Region B's controls all censored before t*: HJ/AG control mass is zero
    rows = []
    for i in range(40):
        rows.append((1 + i / 10, 1, i % 2, "A", i / 40))
    for i in range(40):
        z = i % 2
        rows.append((0.5 if z == 0 else 1 + i / 10, 0 if z == 0 else 1, z, "B", i / 40))
    path = tmp_path / "f.csv"
    pd.DataFrame(rows, columns=["time", "event", "treatment", "region", "X1"]).to_csv(path, index=False)
    out = tmp_path / "f"
    code = main(["analyze", "--input", str(path), "--tstar", "3", "--weighting", "cw", "--out", str(out)])
    assert code == 1
    est = pd.read_csv(out / "estimates.csv")
    assert (est["status"] == "ok").any() and (est["status"] != "ok").any()
    assert "region B" in capsys.readouterr().err
