import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from errors import OracleRefusal
from perron import (PairMeasure, legendre_solve, pair_measure_rate, pair_rate, rho_star, rho_star_solve,
                    transfer_matrix, varrho, varrho_gradient, varrho_power)

weights4 = st.lists(st.floats(min_value=-4.0, max_value=4.0), min_size=4, max_size=4)


def numpy_varrho(lam):
    return float(np.log(np.max(np.abs(np.linalg.eigvals(transfer_matrix(lam))))))


@pytest.mark.parametrize("d", [2, 3, 5])
def test_varrho_at_zero(d):
    assert abs(varrho(np.zeros(2 * d)) - np.log(2 * d - 1)) < 1e-12


def test_varrho_shift_equivariance():
    lam = np.array([0.3, -1.2, 0.7, 0.1])
    assert abs(varrho(lam + 2.5) - varrho(lam) - 2.5) < 1e-10


def test_transfer_matrix_forbids_backtracking():
    M = transfer_matrix(np.zeros(4))
    assert M[0, 1] == 0.0 and M[1, 0] == 0.0 and M[2, 3] == 0.0
    assert M[0, 0] == 1.0 and M[0, 2] == 1.0


@given(lam=weights4)
@settings(max_examples=40, deadline=None)
def test_varrho_matches_eigenvalue(lam):
    assert abs(varrho(lam) - numpy_varrho(lam)) < 1e-9


@given(lam=st.lists(st.floats(min_value=-2.0, max_value=2.0), min_size=4, max_size=4))
@settings(max_examples=20, deadline=None)
def test_power_iteration_agrees(lam):
    assert abs(varrho_power(lam) - varrho(lam)) < 1e-8


@given(a=weights4, b=weights4)
@settings(max_examples=40, deadline=None)
def test_varrho_midpoint_convex(a, b):
    a, b = np.array(a), np.array(b)
    assert varrho(0.5 * (a + b)) <= 0.5 * (varrho(a) + varrho(b)) + 1e-10


def test_varrho_rank_three(rng):
    for _ in range(5):
        lam = rng.normal(size=6)
        assert abs(varrho(lam) - numpy_varrho(lam)) < 1e-9


def test_gradient_is_probability_vector(rng):
    lam = rng.normal(size=6)
    grad = varrho_gradient(lam)
    assert np.all(grad > 0)
    assert abs(grad.sum() - 1.0) < 1e-12


def test_gradient_matches_finite_difference():
    lam = np.array([0.4, -0.3, 1.1, -0.8])
    h = 1e-6
    fd = np.array([(varrho(lam + h * e) - varrho(lam - h * e)) / (2 * h) for e in np.eye(4)])
    np.testing.assert_allclose(varrho_gradient(lam), fd, atol=1e-7)


def test_gradient_uniform_at_zero():
    np.testing.assert_allclose(varrho_gradient(np.zeros(4)), 0.25, atol=1e-12)


def test_rho_star_vanishes_at_uniform():
    assert abs(rho_star([0.25] * 4)) < 1e-10
    assert abs(rho_star([1 / 6] * 6)) < 1e-10


def test_rho_star_inverts_gradient():
    lam = np.array([0.5, -0.2, 0.1, 0.0])
    xi = varrho_gradient(lam)
    result = legendre_solve(xi)
    expected = float(np.dot(xi, lam) - varrho(lam) + np.log(3))
    assert abs(result.value - expected) < 1e-8
    assert result.residual < 1e-8


def test_rho_star_is_nonnegative_and_convex(rng):
    a = rng.dirichlet(np.ones(4))
    b = rng.dirichlet(np.ones(4))
    ra, rb = rho_star(a), rho_star(b)
    mid = rho_star(0.5 * (a + b))
    assert ra >= -1e-10 and rb >= -1e-10
    assert mid <= 0.5 * (ra + rb) + 1e-8


def test_rho_star_boundary_is_flagged():
    result = rho_star_solve([0.5, 0.0, 0.25, 0.25])
    assert result.boundary
    assert np.isfinite(result.value)


def test_rho_star_corner_value():
    # only a^n has counts (n, 0, 0, 0): rate ln 3
    result = rho_star_solve([1.0, 0.0, 0.0, 0.0])
    assert result.boundary
    assert abs(result.value - np.log(3.0)) < 1e-3


def test_rho_star_boundary_extrapolation_matches_close_solve():
    xi = np.array([0.5, 0.0, 0.25, 0.25])
    close = legendre_solve((1 - 1e-6) * xi + 1e-6 * np.full(4, 0.25)).value
    assert abs(rho_star(xi) - close) < 1e-3


def test_rho_star_rejects_non_simplex():
    with pytest.raises(ValueError):
        rho_star([0.5, 0.5, 0.5, -0.5])


def test_pair_rate_of_uniform_chain_is_zero():
    pi = np.full((4, 4), 1 / 12)
    pi[np.arange(4), np.arange(4) ^ 1] = 0.0
    assert abs(pair_rate(pi)) < 1e-14
    assert PairMeasure(pi).balanced()


def test_pair_rate_backtracking_is_infinite():
    pi = np.zeros((4, 4))
    pi[0, 1] = pi[1, 0] = 0.5
    assert pair_rate(pi) == float("inf")


def test_pair_measure_oracle_refuses_rank_three():
    with pytest.raises(OracleRefusal):
        pair_measure_rate([1 / 6] * 6)


@pytest.mark.slow
@pytest.mark.parametrize("nu", [[0.25] * 4, [0.4, 0.2, 0.25, 0.15], [0.1, 0.3, 0.35, 0.25]])
def test_pair_measure_agrees_with_rho_star(nu):
    assert abs(pair_measure_rate(nu) - rho_star(nu)) < 1e-5
