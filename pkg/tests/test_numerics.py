import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrct_rmst.numerics import (RngStream, chi_square_upper_tail, gauss_hermite_nodes,
                                gauss_legendre_nodes, normal_quantile, solve_spd)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-6, 200), st.integers(1, 30))
def test_chi_square_against_mpmath(x, df):
    oracle = float(mpmath.gammainc(mpmath.mpf(df) / 2, mpmath.mpf(x) / 2, mpmath.inf, regularized=True))
    got = chi_square_upper_tail(x, df)
    assert got == pytest.approx(oracle, rel=1e-10, abs=1e-300)


def test_chi_square_known_values():
    assert chi_square_upper_tail(3.8415, 1) == pytest.approx(0.05, abs=1e-4)
    assert chi_square_upper_tail(6.0, 2) == pytest.approx(math.exp(-3), abs=1e-15)
    assert chi_square_upper_tail(2.0, 1) == pytest.approx(0.15729920705028513, abs=1e-14)
    assert chi_square_upper_tail(0.0, 3) == 1.0
    with pytest.raises(ValueError):
        chi_square_upper_tail(-1, 1)


def test_normal_quantile():
    assert normal_quantile(0.975) == pytest.approx(1.959963984540054, abs=1e-14)
    assert normal_quantile(0.5) == 0.0
    with pytest.raises(ValueError):
        normal_quantile(1.0)


def test_gauss_legendre_integrates_polynomials():
    x, w = gauss_legendre_nodes(8, 0.0, 4.0)
    assert w @ x**15 == pytest.approx(4**16 / 16, rel=1e-13)


def test_gauss_hermite_normal_moments():
    x, w = gauss_hermite_nodes(20)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)
    assert w @ x**2 == pytest.approx(1.0, abs=1e-13)
    assert w @ x**4 == pytest.approx(3.0, abs=1e-12)
    assert w @ np.exp(x) == pytest.approx(math.exp(0.5), rel=1e-12)


def test_solve_spd(rng):
    A = rng.normal(size=(5, 5))
    A = A @ A.T + 5 * np.eye(5)
    b = rng.normal(size=5)
    np.testing.assert_allclose(A @ solve_spd(A, b), b, atol=1e-12)
    with pytest.raises(np.linalg.LinAlgError):
        solve_spd(-np.eye(2), np.ones(2))


def test_rng_streams_are_reproducible_and_distinct():
    a = RngStream(7, 3).generator.random(5)
    b = RngStream(7, 3).generator.random(5)
    c = RngStream(7, 4).generator.random(5)
    d = RngStream(8, 3).generator.random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_rng_counter_advances():
    s = RngStream(1, 0)
    c0 = s.counter
    s.generator.random(10)
    assert not np.array_equal(c0, s.counter)
    np.testing.assert_array_equal(s.spawn(5).generator.random(3), RngStream(1, 5).generator.random(3))
    with pytest.raises(ValueError):
        RngStream(-1)
