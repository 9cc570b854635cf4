#!/usr/bin/env python3
"""
Rate functions and pressures of the word-length process |Z_n|

    Psi*(xi) = inf_{s <= ln R} (<xi, psi(s)> - s)
    P(s)     = varrho(psi(s))                 (pressure)
    L*(q)    = sup_{s <= ln R} (s - q P(s))   (word-length rate function)
    hatP(s)  = varrho(psi(s) + psi(ln R))

L* is computed two ways: the Legendre route above and the minimax route
L*(q) = min_xi q [rho*(xi) - ln(2d-1)] - Psi*(q xi).
"""
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from config import get_config
from errors import MfbrwError, NearSingular, RootOutOfRange, RouteMismatch
from first_passage import FirstPassageSolver, get_solver
from free_group import StepDistribution
from perron import legendre_solve, varrho, varrho_gradient

logger = logging.getLogger(__name__)

PROFILE_COLUMNS = ["q", "Lstar", "dLstar", "s_of_q"]
PRESSURE_COLUMNS = ["s", "P", "Pprime", "hatP"]


@dataclass(frozen=True)
class SOfXi:
    """Minimiser s(xi) of <xi, psi(s)> - s"""
    s: float
    residual: float
    saturated: Optional[str] = None  # "lower" (s -> -inf) or "upper" (s -> ln R)


@dataclass(frozen=True)
class LegendrePoint:
    value: float
    s: float
    saturated: Optional[str] = None


@dataclass
class RateProfile:
    """Tabulated L* over a q-grid"""
    q: np.ndarray
    Lstar: np.ndarray
    dLstar: np.ndarray
    s_of_q: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)

    def rows(self) -> List[List[float]]:
        return [[float(v) for v in row] for row in zip(self.q, self.Lstar, self.dLstar, self.s_of_q)]


@dataclass
class PressureCurve:
    """P, P', hatP over an s-grid below ln R"""
    s: np.ndarray
    P: np.ndarray
    Pprime: np.ndarray
    hatP: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)

    def rows(self) -> List[List[float]]:
        return [[float(v) for v in row] for row in zip(self.s, self.P, self.Pprime, self.hatP)]


@dataclass
class HypothesisReport:
    """g(s) = hatP(s)/P'(s) - s + ln R sampled on a grid, with its boundary limits"""
    s_grid: np.ndarray
    g: np.ndarray
    max_g: float
    argmax_s: float
    upper_limit: float        # g just below ln R (tends to 0)
    lower_limit: float        # exact s -> -inf limit, a negative root
    lower_limit_sampled: float
    tolerance: float

    @property
    def certified(self) -> bool:
        return bool(self.max_g <= self.tolerance)


def log_spaced_grid(upper: float, span: float, edge: float, points: int) -> np.ndarray:
    """Points in [upper - span, upper - edge], denser towards upper"""
    offsets = np.exp(np.linspace(np.log(span), np.log(edge), points))
    return upper - offsets


def project_simplex(c: np.ndarray, mass: float = 1.0) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum x = mass}"""
    n = len(c)
    a = -np.sort(-c)
    lambdas = (np.cumsum(a) - mass) / np.arange(1, n + 1)
    for k in range(n - 1, -1, -1):
        if a[k] > lambdas[k]:
            return np.maximum(c - lambdas[k], 0.0)
    return np.full(n, mass / n)


class RateFunctions:
    """Pressure and rate functions for one step distribution"""

    def __init__(self, mu: StepDistribution, solver: Optional[FirstPassageSolver] = None,
                 tolerances: Optional[Dict[str, Any]] = None):
        self.mu = mu
        self.solver = solver or get_solver(mu)
        tol = tolerances if tolerances is not None else get_config().get_tolerances()
        self.s_max = float(tol["s_max"])
        self.eps_edge = float(tol["eps_edge"])
        self.eps_route = float(tol["eps_route"])
        self.simplex_max_iter = int(tol["simplex_max_iter"])
        self.hypothesis_tol = float(tol["hypothesis_tol"])
        self.radius = self.solver.spectral_radius()
        self.lnR = self.radius.lnR
        self._psi_lnR = self.solver.psi(self.lnR).values
        self._P: Dict[float, float] = {}
        self._dP: Dict[float, float] = {}
        self._lock = threading.Lock()

    # -- pressure --

    def pressure(self, s: float) -> float:
        with self._lock:
            cached = self._P.get(s)
        if cached is not None:
            return cached
        value = varrho(self.solver.psi(s).values)
        with self._lock:
            self._P[s] = value
        return value

    def pressure_prime(self, s: float) -> float:
        """P'(s) = <grad varrho(psi(s)), psi'(s)>"""
        with self._lock:
            cached = self._dP.get(s)
        if cached is not None:
            return cached
        value = float(np.dot(varrho_gradient(self.solver.psi(s).values), self.solver.psi_prime(s)))
        with self._lock:
            self._dP[s] = value
        return value

    def pressure_second(self, s: float, h: float = 1e-4) -> float:
        return (self.pressure_prime(s + h) - self.pressure_prime(s - h)) / (2 * h)

    def escape_rate(self) -> float:
        """C_RW = 1/P'(0)"""
        return 1.0 / self.pressure_prime(0.0)

    def clt_variance(self) -> float:
        """Asymptotic variance of |Z_n|/sqrt(n): P''(0)/P'(0)^3 = 1/(L*)''(C_RW)"""
        return self.pressure_second(0.0) / self.pressure_prime(0.0) ** 3

    def hat_pressure(self, s: float) -> float:
        return varrho(self.solver.psi(s).values + self._psi_lnR)

    def hat_pressure_prime(self, s: float) -> float:
        grad = varrho_gradient(self.solver.psi(s).values + self._psi_lnR)
        return float(np.dot(grad, self.solver.psi_prime(s)))

    def hat_pressure_limit(self) -> float:
        """lim_{s -> -inf} hatP(s) - s + ln R: the root of sum mu(a)RF_a(R)/(e^rho + mu(a)RF_a(R)) = 1"""
        weights = self.mu.mu * self.radius.R * self.radius.critical_values
        return varrho(np.log(weights))

    def backscatter_mass(self) -> float:
        """sum_a mu(a) R F_a(R), strictly below 1"""
        return float(np.sum(self.mu.mu * self.radius.R * self.radius.critical_values))

    # -- Psi* --

    def s_of_xi(self, xi: Sequence[float]) -> SOfXi:
        xi = np.asarray(xi, dtype=float)
        mass = float(xi.sum())
        if not 0.0 < mass < 1.0:
            raise ValueError(f"s(xi) needs 0 < |xi|_1 < 1, got {mass}")

        def residual(s):
            return float(np.dot(xi, self.solver.psi_prime(s))) - 1.0

        lo, hi = -self.s_max, self.lnR - self.eps_edge
        f_lo, f_hi = residual(lo), residual(hi)
        if f_lo >= 0.0 and f_hi >= 0.0:
            logger.warning(f"s(xi) saturated at -S_max for |xi|={mass!r}")
            return SOfXi(lo, f_lo, "lower")
        if f_hi < 0.0 and f_lo < 0.0:
            return SOfXi(hi, f_hi, "upper")
        if f_lo > 0.0 > f_hi:
            raise RootOutOfRange("s_of_xi", lo, hi, f_lo, f_hi)
        s = optimize.brentq(residual, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=500)
        return SOfXi(float(s), residual(s))

    def psi_star(self, xi: Sequence[float]) -> float:
        xi = np.asarray(xi, dtype=float)
        if np.any(xi < -1e-15) or xi.sum() > 1.0 + 1e-12:
            raise ValueError(f"xi must be nonnegative with |xi|_1 <= 1, got {xi}")
        xi = np.maximum(xi, 0.0)
        mass = float(xi.sum())
        if mass <= 1e-15:
            return -self.lnR
        if mass >= 1.0 - 1e-15:
            return float(np.dot(xi, self.mu.log_mu))
        root = self.s_of_xi(xi)
        s = self.lnR if root.saturated == "upper" else root.s
        return float(np.dot(xi, self.solver.psi(s).values) - s)

    def psi_star_gradient(self, xi: Sequence[float]) -> np.ndarray:
        """grad Psi*(xi) = psi(s(xi))"""
        root = self.s_of_xi(xi)
        s = self.lnR if root.saturated == "upper" else root.s
        return self.solver.psi(s).values

    # -- L* by the Legendre route --

    def rate_L_one(self) -> float:
        """L*(1) = -varrho(ln mu), the limit of s - P(s) as s -> -inf"""
        return -varrho(self.mu.log_mu)

    def rate_L_legendre(self, q: float) -> LegendrePoint:
        if not 0.0 <= q <= 1.0:
            raise ValueError(f"q must lie in [0, 1], got {q}")
        if q == 0.0:
            return LegendrePoint(self.lnR, self.lnR, "upper")
        if q == 1.0:
            return LegendrePoint(self.rate_L_one(), -self.s_max, "lower")

        def objective(s):
            return s - q * self.pressure(s)

        def residual(s):
            return self.pressure_prime(s) - 1.0 / q

        lo, hi = -self.s_max, self.lnR - self.eps_edge
        f_lo, f_hi = residual(lo), residual(hi)
        if f_lo >= 0.0:
            return LegendrePoint(objective(lo), lo, "lower")
        if f_hi <= 0.0:
            # stationary point inside the guard band: the supremum sits at ln R
            best = max((objective(hi), hi), (objective(self.lnR), self.lnR))
            return LegendrePoint(best[0], best[1], "upper")
        s = optimize.brentq(residual, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=500)
        return LegendrePoint(float(objective(s)), float(s))

    def rate_L(self, q: float) -> float:
        return self.rate_L_legendre(q).value

    def rate_L_prime(self, q: float) -> float:
        """(L*)'(q) = -P(s(q))"""
        point = self.rate_L_legendre(q)
        s = min(point.s, self.lnR)
        return -self.pressure(s)

    def pressure_dual(self, s: float) -> float:
        """P(s) = sup_{q in (0, 1]} (s - L*(q))/q"""
        res = optimize.minimize_scalar(lambda q: -(s - self.rate_L(q)) / q, bounds=(1e-4, 1.0),
                                       method="bounded", options={"xatol": 1e-9})
        candidates = [-float(res.fun), s - self.rate_L_one()]
        return max(candidates)

    # -- L* by the minimax route --

    def minimax_objective(self, q: float, xi: np.ndarray) -> Tuple[float, np.ndarray]:
        """f(q, xi) and its gradient in xi"""
        d2 = len(xi)
        legendre = legendre_solve(xi)
        rho_star_value = legendre.value
        if q >= 1.0:
            psi_value = float(np.dot(xi, self.mu.log_mu))
            psi_grad = self.mu.log_mu
        else:
            psi_value = self.psi_star(q * xi)
            psi_grad = self.psi_star_gradient(q * xi)
        value = q * (rho_star_value - np.log(d2 - 1)) - psi_value
        grad = q * legendre.lam - q * psi_grad
        return float(value), grad

    def rate_L_minimax(self, q: float, seed: int = 0, check: bool = True,
                       route_tolerance: Optional[float] = None) -> float:
        if not 0.0 <= q <= 1.0:
            raise ValueError(f"q must lie in [0, 1], got {q}")
        if q == 0.0:
            value = -self.psi_star(np.zeros(self.mu.alphabet.size))
        else:
            value = self._minimise_over_simplex(q, seed)
        if check:
            tolerance = self.eps_route if route_tolerance is None else route_tolerance
            legendre = self.rate_L(q)
            if abs(value - legendre) > tolerance:
                raise RouteMismatch(f"L*({q})", (legendre, value), tolerance)
        return value

    def _minimise_over_simplex(self, q: float, seed: int) -> float:
        n = self.mu.alphabet.size
        pairs = np.arange(n) ^ 1
        floor = 1e-6
        rng = np.random.default_rng(seed)

        def symmetrise(v):
            # f is invariant under a <-> a^-1 for symmetric mu, so the minimiser is too
            return 0.5 * (v + v[pairs])

        def project(v):
            return floor + project_simplex(v - floor, 1.0 - n * floor)

        starts = [np.full(n, 1.0 / n)]
        for _ in range(self.mu.rank):
            starts.append(project(symmetrise(rng.dirichlet(np.ones(n)))))

        best = np.inf
        for xi in starts:
            value, grad = self.minimax_objective(q, xi)
            step = 0.5
            for _ in range(self.simplex_max_iter):
                grad = symmetrise(grad - grad.mean())
                while True:
                    candidate = project(xi - step * grad)
                    cand_value, cand_grad = self.minimax_objective(q, candidate)
                    decrease = float(np.dot(grad, xi - candidate))
                    if cand_value <= value - 0.25 * decrease or step < 1e-12:
                        break
                    step *= 0.5
                moved = float(np.max(np.abs(candidate - xi)))
                if cand_value <= value:
                    xi, value, grad = candidate, cand_value, cand_grad
                step = min(step * 2.0, 4.0)
                if moved < 1e-10 or step < 1e-12:
                    break
            best = min(best, value)
        logger.debug(f"rate_L_minimax q={q!r} value={best!r} starts={len(starts)}")
        return float(best)

    # -- Hypothesis I --

    def hypothesis_function(self, s: float) -> float:
        return self.hat_pressure(s) / self.pressure_prime(s) - s + self.lnR

    def hypothesis_one(self, s_grid: Optional[Sequence[float]] = None, span: float = 20.0,
                       points: int = 201, tolerance: Optional[float] = None) -> HypothesisReport:
        if s_grid is None:
            s_grid = log_spaced_grid(self.lnR, span, self.eps_edge * 10, points)
        s_grid = np.asarray(s_grid, dtype=float)
        g = np.array([self.hypothesis_function(s) for s in s_grid])
        idx = int(np.argmax(g))
        tolerance = self.hypothesis_tol if tolerance is None else tolerance
        upper = self.hypothesis_function(self.lnR - 1e-3)
        lower_exact = self.hat_pressure_limit()
        lower_sampled = self.hypothesis_function(-self.s_max)
        report = HypothesisReport(s_grid, g, float(g[idx]), float(s_grid[idx]), float(upper),
                                  float(lower_exact), float(lower_sampled), tolerance)
        if not report.certified:
            logger.warning(f"hypothesis I: max g = {report.max_g:.3e} at s = {report.argmax_s:.6g} for {self.mu}")
        return report

    # -- tables --

    def rate_profile(self, q_grid: Optional[Sequence[float]] = None, points: int = 201,
                     workers: int = 1) -> RateProfile:
        q_grid = np.linspace(0.0, 1.0, points) if q_grid is None else np.asarray(q_grid, dtype=float)

        def evaluate(q):
            point = self.rate_L_legendre(float(q))
            s = min(point.s, self.lnR)
            return point.value, -self.pressure(s), point.s

        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            results = list(pool.map(evaluate, q_grid))
        values = np.array(results)
        return RateProfile(q_grid, values[:, 0], values[:, 1], values[:, 2], self.metadata())

    def pressure_curve(self, s_grid: Optional[Sequence[float]] = None, span: float = 20.0,
                       points: int = 201, workers: int = 1) -> PressureCurve:
        if s_grid is None:
            s_grid = log_spaced_grid(self.lnR, span, self.eps_edge * 10, points)
        s_grid = np.asarray(s_grid, dtype=float)

        def evaluate(s):
            return self.pressure(s), self.pressure_prime(s), self.hat_pressure(s)

        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            results = list(pool.map(evaluate, s_grid))
        values = np.array(results)
        return PressureCurve(s_grid, values[:, 0], values[:, 1], values[:, 2], self.metadata())

    def metadata(self) -> Dict[str, Any]:
        return {
            "mu": self.mu.to_mapping(),
            "R": self.radius.R,
            "s_max": self.s_max,
            "eps_edge": self.eps_edge,
        }


_rates: Dict[Tuple[Any, ...], RateFunctions] = {}
_rates_lock = threading.Lock()


def get_rates(mu: StepDistribution) -> RateFunctions:
    """Get or create the shared rate functions for mu"""
    with _rates_lock:
        rates = _rates.get(mu.key)
        if rates is None:
            rates = RateFunctions(mu)
            _rates[mu.key] = rates
        return rates


def clear_rates():
    with _rates_lock:
        _rates.clear()


def psi_star(mu: StepDistribution, xi: Sequence[float]) -> float:
    return get_rates(mu).psi_star(xi)


def s_of_xi(mu: StepDistribution, xi: Sequence[float]) -> SOfXi:
    return get_rates(mu).s_of_xi(xi)


def pressure(mu: StepDistribution, s: float) -> float:
    return get_rates(mu).pressure(s)


def pressure_prime(mu: StepDistribution, s: float) -> float:
    return get_rates(mu).pressure_prime(s)


def rate_L_legendre(mu: StepDistribution, q: float) -> Tuple[float, float]:
    point = get_rates(mu).rate_L_legendre(q)
    return point.value, point.s


def rate_L_minimax(mu: StepDistribution, q: float) -> float:
    return get_rates(mu).rate_L_minimax(q)


def hat_pressure(mu: StepDistribution, s: float) -> float:
    return get_rates(mu).hat_pressure(s)


def hypothesis_one(mu: StepDistribution, s_grid: Optional[Sequence[float]] = None) -> HypothesisReport:
    return get_rates(mu).hypothesis_one(s_grid)
