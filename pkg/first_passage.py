#!/usr/bin/env python3
"""
First-passage generating functions of the nearest-neighbour walk on the free group

F_a(r) = E[r^T(a)] for the hitting time T(a) of the generator a solves the
first-step system

    F_a = r mu(a) + r mu(e) F_a + r F_a * sum_{b != a} mu(b) F_{b^-1}

whose minimal nonnegative solution is reached by monotone iteration from zero.
The spectral radius R is the largest r for which that solution is finite.
"""
import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import optimize

from config import get_config
from errors import NearSingular, NoFiniteSolution, NonConvergent
from free_group import ReducedWord, StepDistribution, letter_counts

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FirstPassageVector:
    """F_a(r) for every letter, plus solver diagnostics"""
    r: float
    values: np.ndarray
    iterations: int = 0
    residual: float = 0.0

    @property
    def log_values(self) -> np.ndarray:
        return np.log(self.values)


@dataclass(frozen=True)
class PsiVector:
    """psi_a(s) = ln F_a(e^s), optionally with psi'_a(s)"""
    s: float
    values: np.ndarray
    derivative: Optional[np.ndarray] = None


@dataclass(frozen=True)
class SpectralRadius:
    """R (inverse spectral radius of the walk) with its certificates"""
    R: float
    bracket: Tuple[float, float]
    critical_values: np.ndarray = field(repr=False)
    critical_identity: float = 1.0
    polished: bool = True

    @property
    def lnR(self) -> float:
        return float(np.log(self.R))


class FirstPassageSolver:
    """Solves the first-passage system for one step distribution and caches the results"""

    def __init__(self, mu: StepDistribution, tolerances: Optional[Dict[str, Any]] = None):
        self.mu = mu
        tol = tolerances if tolerances is not None else get_config().get_tolerances()
        self.eps_fp = float(tol["eps_fp"])
        self.max_iter = int(tol["fp_max_iter"])
        self.newton_max_iter = int(tol["newton_max_iter"])
        self.eps_R = float(tol["eps_R"])
        self.margin = float(tol["divergence_margin"])
        self.eps_edge = float(tol["eps_edge"])
        self.h_psi = float(tol["h_psi"])

        self._inv = mu.alphabet.inverse_index()
        self._cache: Dict[float, FirstPassageVector] = {}
        self._lock = threading.Lock()
        self._radius: Optional[SpectralRadius] = None

    # -- the fixed-point map and its Jacobian --

    def system(self, F: np.ndarray, r: float) -> np.ndarray:
        mu = self.mu.mu
        S = float(np.dot(mu, F[self._inv]))
        return r * mu + r * self.mu.mu_e * F + r * F * (S - mu * F[self._inv])

    def jacobian(self, F: np.ndarray, r: float) -> np.ndarray:
        mu = self.mu.mu
        n = len(F)
        S = float(np.dot(mu, F[self._inv]))
        J = r * np.outer(F, mu[self._inv])
        J[np.arange(n), self._inv] -= r * F * mu
        J[np.arange(n), np.arange(n)] += r * (self.mu.mu_e + S - mu * F[self._inv])
        return J

    # -- solving --

    def solve(self, r: float, method: str = "newton") -> FirstPassageVector:
        """Minimal nonnegative solution of the first-passage system at radius r"""
        if r <= 0:
            raise ValueError(f"radius must be positive, got {r}")
        critical = self._critical_match(r)
        if critical is not None:
            return critical
        with self._lock:
            cached = self._cache.get(r)
        if cached is not None:
            return cached

        if method == "newton":
            result = self._solve_newton(r)
        elif method == "kleene":
            result = self._solve_kleene(r)
        else:
            raise ValueError(f"unknown method {method!r}")

        with self._lock:
            if len(self._cache) > 50_000:
                self._cache.clear()
            self._cache[r] = result
        return result

    def _critical_match(self, r: float) -> Optional[FirstPassageVector]:
        radius = self._radius
        if radius is None or not radius.polished:
            return None
        if abs(r - radius.R) <= 1e-13 * radius.R:
            return FirstPassageVector(radius.R, radius.critical_values, 0, 0.0)
        return None

    def _check_iterate(self, F: np.ndarray, previous: np.ndarray, r: float, iteration: int):
        if not np.all(np.isfinite(F)):
            raise NoFiniteSolution(r, iteration, "iterate is not finite")
        if np.any(F > 1.0 + self.margin):
            raise NoFiniteSolution(r, iteration, f"component {F.max():.6g} exceeds 1 + {self.margin:g}")
        if np.any(F < previous - 1e-12 * (1.0 + previous)):
            raise NoFiniteSolution(r, iteration, "monotone iteration decreased")

    def _solve_newton(self, r: float) -> FirstPassageVector:
        # Newton's method from zero on this positive polynomial system stays below the
        # minimal solution and increases monotonically towards it
        n = self.mu.alphabet.size
        F = np.zeros(n)
        eye = np.eye(n)
        for iteration in range(1, self.newton_max_iter + 1):
            G = self.system(F, r)
            try:
                step = np.linalg.solve(eye - self.jacobian(F, r), G - F)
            except np.linalg.LinAlgError:
                raise NoFiniteSolution(r, iteration, "singular linearisation")
            new = F + step
            self._check_iterate(new, F, r, iteration)
            step_norm = float(np.max(np.abs(step)))
            F = new
            if step_norm < self.eps_fp:
                break
            # near the fold the step stalls at rounding level while the residual is already exact
            if step_norm < 1e-7 and np.max(np.abs(self.system(F, r) - F)) < 4e-16:
                break
        else:
            raise NoFiniteSolution(r, self.newton_max_iter, "Newton iteration did not contract")
        residual = float(np.max(np.abs(self.system(F, r) - F)))
        logger.debug(f"solve_first_passage r={r!r} method=newton iterations={iteration} residual={residual:.3e}")
        return FirstPassageVector(float(r), F, iteration, residual)

    def _solve_kleene(self, r: float) -> FirstPassageVector:
        n = self.mu.alphabet.size
        F = np.zeros(n)
        for iteration in range(1, self.max_iter + 1):
            new = self.system(F, r)
            self._check_iterate(new, F, r, iteration)
            diff = float(np.max(np.abs(new - F)))
            F = new
            if diff < self.eps_fp:
                break
        else:
            raise NoFiniteSolution(r, self.max_iter, "monotone sweep did not contract")
        residual = float(np.max(np.abs(self.system(F, r) - F)))
        logger.debug(f"solve_first_passage r={r!r} method=kleene iterations={iteration} residual={residual:.3e}")
        return FirstPassageVector(float(r), F, iteration, residual)

    def feasible(self, r: float) -> bool:
        try:
            self._solve_newton(r)
            return True
        except NoFiniteSolution:
            return False

    # -- spectral radius --

    def spectral_radius(self) -> SpectralRadius:
        if self._radius is None:
            self._radius = self._compute_spectral_radius()
        return self._radius

    def _compute_spectral_radius(self) -> SpectralRadius:
        lo, hi = 1.0, 2.0
        while self.feasible(hi):
            lo, hi = hi, 2.0 * hi
            if hi > 1e12:
                raise NonConvergent("spectral_radius bracket expansion", 0, lo, np.inf, (lo, hi))
        iterations = 0
        while hi - lo > self.eps_R:
            mid = 0.5 * (lo + hi)
            if self.feasible(mid):
                lo = mid
            else:
                hi = mid
            iterations += 1
            if iterations > 200:
                raise NonConvergent("spectral_radius bisection", iterations, lo, hi - lo, (lo, hi))

        base = self._solve_newton(lo)
        R, F, ok = self._polish(lo, base.values)
        if not ok or not (lo - 10 * self.eps_R <= R <= hi + 10 * self.eps_R):
            logger.warning(f"spectral_radius polish rejected (R={R!r}, bracket=[{lo!r}, {hi!r}]); keeping bisection value")
            R, F, ok = lo, base.values, False
        identity = float(np.sum(F ** 2 / (1.0 + F ** 2)))
        logger.debug(f"spectral_radius R={R!r} bracket=[{lo!r}, {hi!r}] bisections={iterations} identity={identity!r}")
        return SpectralRadius(float(R), (lo, hi), F.copy(), identity, ok)

    def _polish(self, r0: float, F0: np.ndarray) -> Tuple[float, np.ndarray, bool]:
        """Newton on {F = G(F, r), sum F^2/(1+F^2) = 1}, regular at the fold where R sits"""
        n = len(F0)
        eye = np.eye(n)

        def equations(z):
            F, r = z[:n], z[n]
            out = np.empty(n + 1)
            out[:n] = F - self.system(F, r)
            out[n] = np.sum(F ** 2 / (1.0 + F ** 2)) - 1.0
            return out

        def jac(z):
            F, r = z[:n], z[n]
            out = np.zeros((n + 1, n + 1))
            out[:n, :n] = eye - self.jacobian(F, r)
            out[:n, n] = -self.system(F, r) / r
            out[n, :n] = 2.0 * F / (1.0 + F ** 2) ** 2
            return out

        sol = optimize.root(equations, np.append(F0, r0), jac=jac, method="hybr", tol=1e-15)
        F, R = sol.x[:n], float(sol.x[n])
        ok = bool(sol.success or np.max(np.abs(equations(sol.x))) < 1e-13)
        ok = ok and bool(np.all(F > 0)) and bool(np.all(F < 1))
        return R, F, ok

    def critical_identity(self) -> float:
        """sum_a F_a(R)^2 / (1 + F_a(R)^2), equal to 1"""
        return self.spectral_radius().critical_identity

    # -- psi and derivatives --

    def _check_s(self, s: float) -> SpectralRadius:
        radius = self.spectral_radius()
        if s > radius.lnR + 1e-13:
            raise NoFiniteSolution(float(np.exp(s)), 0, f"s={s!r} exceeds ln R={radius.lnR!r}")
        return radius

    def _radius_for(self, s: float, radius: SpectralRadius) -> float:
        return radius.R if s >= radius.lnR else float(np.exp(s))

    def psi(self, s: float) -> PsiVector:
        radius = self._check_s(s)
        fp = self.solve(self._radius_for(s, radius))
        return PsiVector(float(s), fp.log_values)

    def psi_prime(self, s: float) -> np.ndarray:
        """psi'_a(s) from the linearised system (I - J) dF = F dr/r"""
        radius = self.spectral_radius()
        if s > radius.lnR - self.eps_edge:
            raise NearSingular(s, radius.lnR, self.eps_edge)
        r = float(np.exp(s))
        F = self.solve(r).values
        y = np.linalg.solve(np.eye(len(F)) - self.jacobian(F, r), F)
        return y / F

    def psi_with_derivative(self, s: float) -> PsiVector:
        base = self.psi(s)
        return PsiVector(base.s, base.values, self.psi_prime(s))

    def psi_prime_fd(self, s: float, h: Optional[float] = None) -> np.ndarray:
        """Central-difference psi' used to cross-check the analytic route"""
        h = self.h_psi if h is None else h
        return (self.psi(s + h).values - self.psi(s - h).values) / (2.0 * h)

    def f_word(self, r: float, x: ReducedWord) -> float:
        """F_x(r) = prod_a F_a(r)^Xi_a(x)"""
        counts = np.asarray(letter_counts(x).counts, dtype=float)
        if counts.sum() == 0:
            return 1.0
        F = self.solve(r).values
        return float(np.exp(np.dot(counts, np.log(F))))


_solvers: Dict[Tuple[Any, ...], FirstPassageSolver] = {}
_solvers_lock = threading.Lock()


def get_solver(mu: StepDistribution) -> FirstPassageSolver:
    """Get or create the shared solver for mu"""
    with _solvers_lock:
        solver = _solvers.get(mu.key)
        if solver is None:
            solver = FirstPassageSolver(mu)
            _solvers[mu.key] = solver
        return solver


def clear_solvers():
    with _solvers_lock:
        _solvers.clear()


def solve_first_passage(mu: StepDistribution, r: float) -> FirstPassageVector:
    return get_solver(mu).solve(r)


def spectral_radius(mu: StepDistribution) -> SpectralRadius:
    return get_solver(mu).spectral_radius()


def psi(mu: StepDistribution, s: float) -> PsiVector:
    return get_solver(mu).psi(s)


def psi_prime(mu: StepDistribution, s: float) -> np.ndarray:
    return get_solver(mu).psi_prime(s)


def f_word(mu: StepDistribution, r: float, x: ReducedWord) -> float:
    return get_solver(mu).f_word(r, x)
