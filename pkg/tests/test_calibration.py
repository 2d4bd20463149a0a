import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq, linprog

from mrct_rmst.calibration import SolverOptions, effective_sample_size, solve_calibration
from mrct_rmst.errors import DegenerateMomentError, InfeasibleCalibrationError


def _bisection_oracle(x, target):
    """Tilted weights on a scalar support by root finding on the tilt."""
    def mean_at(lam):
        e = np.exp(lam * (x - x.max()))
        return e @ x / e.sum() - target
    lam = brentq(mean_at, -50, 50, xtol=1e-15)
    e = np.exp(lam * x)
    return lam, e / e.sum()


def test_three_point_oracle():
    x = np.array([0.0, 1.0, 2.0])
    sol = solve_calibration(x[:, None], [1.2])
    lam, p = _bisection_oracle(x, 1.2)
    np.testing.assert_allclose(sol.weights, p, rtol=0, atol=1e-10)
    np.testing.assert_allclose(sol.lam[0], lam, atol=1e-8)
    # Closed form: p ∝ (1, a, a^2) with a solving (a + 2a^2)/(1 + a + a^2) = 1.2
    a = (0.2 + np.sqrt(0.04 + 4 * 0.8 * 1.2)) / 1.6
    np.testing.assert_allclose(sol.weights, np.array([1, a, a * a]) / (1 + a + a * a), atol=1e-10)


def test_target_at_sample_mean_gives_uniform(rng):
    G = rng.normal(size=(50, 3))
    sol = solve_calibration(G, G.mean(axis=0))
    np.testing.assert_allclose(sol.weights, 1 / 50, atol=1e-14)
    assert sol.iterations == 0


def test_infeasible_target_raises():
    x = np.array([[0.0], [1.0], [2.0]])
    with pytest.raises(InfeasibleCalibrationError) as info:
        solve_calibration(x, [5.0], names=["X1"])
    assert info.value.offending == "X1"


def test_infeasible_inside_box_outside_hull():
    # Points on the unit-square diagonal; (1, 0) is inside the box but not the hull.
    G = np.array([[0.0, 0.0], [0.5, 0.5], [1.0, 1.0], [0.2, 0.25]])
    with pytest.raises(InfeasibleCalibrationError):
        solve_calibration(G, [0.9, 0.1])


def test_collinear_moments_rejected(rng):
    x = rng.normal(size=20)
    with pytest.raises(DegenerateMomentError):
        solve_calibration(np.column_stack([x, 2 * x + 1]), [0.1, 1.2])
    with pytest.raises(DegenerateMomentError):
        solve_calibration(np.column_stack([x, np.ones(20)]), [0.1, 1.0])


def test_more_moments_than_subjects():
    with pytest.raises(DegenerateMomentError):
        solve_calibration(np.eye(3), [0.3, 0.3, 0.3])


def test_effective_sample_size():
    assert effective_sample_size(np.ones(10)) == pytest.approx(10)
    assert effective_sample_size([1, 0, 0]) == pytest.approx(1)


def _random_feasible(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(20, 501))
    L = int(r.integers(1, 11))
    G = r.normal(size=(n, L)) * r.uniform(0.2, 3, L) + r.normal(size=L)
    # Target is a strictly positive mixture of the rows, so it is interior.
    mix = r.dirichlet(np.full(n, 0.5))
    mix = 0.7 * mix + 0.3 / n
    return G, mix @ G


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_feasible_instances_calibrate_exactly(seed):
    G, target = _random_feasible(seed)
    sol = solve_calibration(G, target)
    assert np.abs(sol.weights @ G - target).max() <= 1e-8
    assert abs(sol.weights.sum() - 1) <= 1e-10
    assert np.all(sol.weights > 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_weights_invariant_to_affine_rescaling(seed):
    G, target = _random_feasible(seed)
    r = np.random.default_rng(seed + 1)
    a = r.uniform(0.5, 4, G.shape[1])
    b = r.normal(size=G.shape[1])
    p1 = solve_calibration(G, target).weights
    p2 = solve_calibration(G * a + b, target * a + b).weights
    np.testing.assert_allclose(p1, p2, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_outside_hull_always_raises(seed):
    r = np.random.default_rng(seed)
    n, L = int(r.integers(10, 200)), int(r.integers(1, 6))
    G = r.normal(size=(n, L))
    direction = r.normal(size=L)
    direction /= np.linalg.norm(direction)
    target = G[np.argmax(G @ direction)] + r.uniform(1e-3, 2) * direction
    with pytest.raises(InfeasibleCalibrationError):
        solve_calibration(G, target)


def test_outside_hull_by_lp_raises(rng):
    checked = 0
    for _ in range(60):
        G = rng.normal(size=(15, 2))
        target = rng.normal(size=2) * 1.5
        res = linprog(np.zeros(15), A_eq=np.vstack([G.T, np.ones(15)]), b_eq=[*target, 1],
                      bounds=[(0, None)] * 15, method="highs")
        if res.status == 2:
            checked += 1
            with pytest.raises(InfeasibleCalibrationError):
                solve_calibration(G, target)
    assert checked > 10
