import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrct_rmst.calibration import calibrate_region
from mrct_rmst.data import Dataset, GSpec, target_from_pooled
from mrct_rmst.diagnostics import (balance_report, balance_report_moments, is_binary,
                                   smd_to_moments, weighted_smd_binary, weighted_smd_continuous,
                                   weighted_variance)

from conftest import make_panel


def test_continuous_hand_example():
    assert weighted_smd_continuous([0, 2], None, [1, 3], None) == pytest.approx(1 / np.sqrt(2), abs=1e-15)


def test_binary_hand_example():
    x1 = np.array([1] * 5 + [0] * 5)
    x2 = np.array([1] * 3 + [0] * 7)
    assert weighted_smd_binary(x1, None, x2, None) == pytest.approx(0.4170, abs=1e-4)
    assert weighted_smd_binary([1, 0], [1, 3], [0.25, 0.25], None) == 0.0


def test_degenerate_cases():
    assert weighted_smd_binary([1, 1], None, [1, 1], None) == 0.0
    assert np.isnan(weighted_smd_binary([1, 1], None, [0, 0], None))
    assert weighted_smd_continuous([2, 2], None, [2, 2], None) == 0.0
    assert np.isnan(weighted_smd_continuous([2, 2], None, [3, 3], None))
    assert np.isnan(weighted_variance([1.0, 2.0], [1.0, 0.0]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_unit_weights_reduce_to_standard_smd(seed):
    r = np.random.default_rng(seed)
    x1, x2 = r.normal(size=30), r.normal(0.3, 2, size=45)
    classical = abs(x1.mean() - x2.mean()) / np.sqrt((x1.var(ddof=1) + x2.var(ddof=1)) / 2)
    assert weighted_smd_continuous(x1, None, x2, None) == pytest.approx(classical, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10), st.floats(-5, 5))
def test_affine_and_swap_invariance(seed, a, b):
    r = np.random.default_rng(seed)
    x1, x2 = r.normal(size=20), r.normal(size=25)
    w1, w2 = r.uniform(0.1, 1, 20), r.uniform(0.1, 1, 25)
    d = weighted_smd_continuous(x1, w1, x2, w2)
    assert weighted_smd_continuous(a * x1 + b, w1, a * x2 + b, w2) == pytest.approx(d, rel=1e-9, abs=1e-12)
    assert weighted_smd_continuous(x2, w2, x1, w1) == pytest.approx(d, rel=1e-14)


def test_weighted_variance_unit_weights_is_sample_variance(rng):
    x = rng.normal(size=12)
    assert weighted_variance(x, np.ones(12)) == pytest.approx(x.var(ddof=1), rel=1e-14)


def _dataset(rng):
    panels = []
    for r, shift in ((1, 0.0), (2, 0.6)):
        n = 300
        X = np.column_stack([rng.normal(shift, 1, n), (rng.random(n) < 0.3 + 0.2 * r).astype(float)])
        panels.append(make_panel(np.ones(n), np.ones(n, int), np.arange(n) % 2, X, r))
    return Dataset(tuple(panels), ("age", "male"))


def test_cw_balances_first_moments(rng):
    ds = _dataset(rng)
    spec = GSpec.parse(["age", "male", "age^2"], ["age", "male"])
    target = target_from_pooled(ds, spec)
    cw = {p.region_id: calibrate_region(p, target).weights for p in ds.panels}
    rep = balance_report(ds, ds.pooled_covariates(), {"none": None, "CW": cw})
    for r in (1, 2):
        assert rep.get("male", r, "CW") <= 1e-8
        w = cw[r]
        x = ds.panel(r).covariates[:, 0]
        assert abs(w @ x - ds.pooled_covariates()[:, 0].mean()) <= 1e-8
        assert rep.get("age", r, "none") > rep.get("age", r, "CW")
    frame = rep.to_frame()
    assert len(frame) == 8 and (frame.smd >= 0).all()
    assert is_binary(ds.pooled_covariates()[:, 1]) and not is_binary(ds.pooled_covariates()[:, 0])


def test_identical_region_and_target():
    X = np.column_stack([np.arange(10.0), np.arange(10) % 2])
    ds = Dataset((make_panel(np.ones(10), np.ones(10, int), np.arange(10) % 2, X, 1),), ("a", "b"))
    rep = balance_report(ds, X, {"none": None})
    assert all(row[3] == 0 for row in rep.rows)


def test_smd_to_moments_matches_sample_version(rng):
    x = rng.normal(1, 2, 50)
    assert smd_to_moments(x, None, 0.5, 4.0) == pytest.approx(abs(x.mean() - 0.5) / np.sqrt((x.var(ddof=1) + 4) / 2))
    assert smd_to_moments(np.array([1, 0, 0, 0.0]), None, 0.5, binary=True) == pytest.approx(
        0.25 / np.sqrt((0.25 * 0.75 + 0.25) / 2))
    ds = _dataset(rng)
    rep = balance_report_moments(ds, {"age": 0.3}, {"age": 1.09 + 0.09}, {"none": None})
    assert np.isnan(rep.get("male", 1, "none"))
    assert rep.get("age", 1, "none") >= 0
