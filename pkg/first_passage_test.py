import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from errors import NearSingular, NoFiniteSolution
from first_passage import FirstPassageSolver, get_solver, psi, spectral_radius
from free_group import ReducedWord, StepDistribution
from perron import varrho


def closed_form_f(r):
    """Isotropic rank 2, mu(e) = 0: F solves 3r F^2 - 4F + r = 0"""
    return (2.0 - np.sqrt(4.0 - 3.0 * r * r)) / (3.0 * r)


@pytest.mark.parametrize("d,expected", [(2, 2 / np.sqrt(3)), (3, 3 / np.sqrt(5))])
def test_spectral_radius_closed_form(d, expected):
    assert abs(spectral_radius(StepDistribution.isotropic(d)).R - expected) < 1e-8


def test_spectral_radius_certificates(iso2):
    radius = spectral_radius(iso2)
    lo, hi = radius.bracket
    assert lo <= radius.R <= hi + 1e-9
    assert abs(radius.critical_identity - 1.0) < 1e-10
    np.testing.assert_allclose(radius.critical_values, 1 / np.sqrt(3), atol=1e-8)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_boundary_identity(d):
    mu = StepDistribution.isotropic(d)
    values = psi(mu, spectral_radius(mu).lnR).values
    np.testing.assert_allclose(values, -0.5 * np.log(2 * d - 1), atol=1e-8)


@pytest.mark.parametrize("r", [0.3, 0.8, 1.0, 1.1])
def test_matches_closed_form(iso2, r):
    F = get_solver(iso2).solve(r).values
    np.testing.assert_allclose(F, closed_form_f(r), rtol=1e-10)


def test_hitting_probability_at_one(iso3):
    np.testing.assert_allclose(get_solver(iso3).solve(1.0).values, 1 / 5, rtol=1e-12)


def test_kleene_agrees_with_newton(aniso2):
    solver = FirstPassageSolver(aniso2)
    newton = solver.solve(0.9, method="newton").values
    kleene = FirstPassageSolver(aniso2).solve(0.9, method="kleene").values
    np.testing.assert_allclose(kleene, newton, rtol=1e-10)


def test_solution_is_fixed_point(aniso2):
    solver = get_solver(aniso2)
    fp = solver.solve(1.05)
    np.testing.assert_allclose(solver.system(fp.values, 1.05), fp.values, atol=1e-13)


def test_beyond_spectral_radius_fails(iso2):
    R = spectral_radius(iso2).R
    with pytest.raises(NoFiniteSolution):
        FirstPassageSolver(iso2).solve(R * 1.01)


def test_increasing_in_r(aniso2):
    solver = get_solver(aniso2)
    R = solver.spectral_radius().R
    previous = np.zeros(4)
    for r in np.linspace(0.1, R * 0.999, 12):
        F = solver.solve(float(r)).values
        assert np.all(F > previous)
        previous = F


def test_psi_prime_matches_finite_difference(aniso2):
    solver = get_solver(aniso2)
    np.testing.assert_allclose(solver.psi_prime(-0.5), solver.psi_prime_fd(-0.5), rtol=1e-6)


def test_psi_prime_guard_band(iso2):
    solver = get_solver(iso2)
    with pytest.raises(NearSingular):
        solver.psi_prime(solver.spectral_radius().lnR - 1e-8)


def test_psi_tends_to_log_mu(aniso2):
    values = psi(aniso2, -30.0).values
    np.testing.assert_allclose(values + 30.0, np.log(aniso2.mu), atol=1e-9)


def test_f_word_is_product(aniso2):
    solver = get_solver(aniso2)
    F = solver.solve(1.0).values
    word = ReducedWord.parse(2, "abA")
    assert abs(solver.f_word(1.0, word) - F[0] * F[2] * F[1]) < 1e-14
    assert solver.f_word(1.0, ReducedWord.empty(2)) == 1.0


@given(w=st.floats(min_value=0.1, max_value=0.9), mu_e=st.floats(min_value=0.0, max_value=0.5))
@settings(max_examples=15, deadline=None)
def test_critical_eigenvalue_identity(w, mu_e):
    mu = StepDistribution.from_generator_weights(2, [w, 1.0 - w], mu_e, normalize=True)
    solver = FirstPassageSolver(mu)
    values = solver.psi(solver.spectral_radius().lnR).values
    assert abs(varrho(2 * values)) < 1e-8


def test_laziness_rescales_spectral_radius(iso2, lazy2):
    # a lazy walk has spectral radius (1 - mu_e) rho + mu_e
    rho = 1.0 / spectral_radius(iso2).R
    lazy_rho = 1.0 / spectral_radius(lazy2).R
    assert abs(lazy_rho - (0.8 * rho + 0.2)) < 1e-9
