#!/usr/bin/env python3
"""
Multifractal spectra of the limit set of a transient BRW on the free group

For offspring mean 1 < r <= R:
    I(r)            = {q : L*(q) <= ln r} = [I_-(r), I_+(r)]
    dim E_r(a, b)   = ln r - max(L*(a), L*(b))
    dim Lambda_r(a) = (ln r - L*(a)) / a
    dim_H Lambda_r  = max_a dim Lambda_r(a) = P(ln r), attained at a(r) = 1/P'(ln r)
"""
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from config import get_config
from errors import DimMismatch, EmptySet, OutOfPhase, ZeroSpeedOffCritical
from free_group import StepDistribution
from rates import HypothesisReport, RateFunctions, get_rates

logger = logging.getLogger(__name__)

SPECTRUM_COLUMNS = ["r", "alpha", "beta", "dimE", "dimLambda_lower", "dimLambda_upper", "exact_flag"]

# relative slack when deciding r == R
_CRITICAL_SLACK = 1e-9
# absolute slack on window membership
_WINDOW_SLACK = 1e-9


@dataclass(frozen=True)
class SpeedWindow:
    """I(r) = [lower, upper] together with the escape rate it contains"""
    r: float
    lower: float
    upper: float
    c_rw: float
    s_lower: Optional[float] = None  # pressure parameter whose speed is the endpoint
    s_upper: Optional[float] = None
    clipped: bool = False            # upper endpoint clipped to 1

    def contains(self, q: float, slack: float = _WINDOW_SLACK) -> bool:
        return self.lower - slack <= q <= self.upper + slack

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class IntervalDimension:
    lower: float
    upper: float
    exact: bool


@dataclass(frozen=True)
class AlphaStar:
    """Maximiser a(r) of (ln r - L*(a))/a and the resulting dim_H Lambda_r"""
    r: float
    alpha: float
    dimension: float
    alpha_closed_form: float
    routes: Dict[str, float] = field(default_factory=dict)

    @property
    def spread(self) -> float:
        values = list(self.routes.values())
        return max(values) - min(values) if values else 0.0


@dataclass
class SpectrumTable:
    """dim E and dim Lambda over an (alpha, beta) grid inside I(r)"""
    r: float
    window: SpeedWindow
    isotropic: bool
    rows_: List[Tuple[float, float, float, float, float, bool]] = field(default_factory=list)

    def rows(self) -> List[List[Any]]:
        return [[self.r, a, b, e, lo, hi, int(exact)] for a, b, e, lo, hi, exact in self.rows_]

    def __len__(self) -> int:
        return len(self.rows_)


class Spectra:
    """Spectrum computations for one step distribution"""

    def __init__(self, mu: StepDistribution, rates: Optional[RateFunctions] = None,
                 tolerances: Optional[Dict[str, Any]] = None):
        self.mu = mu
        self.rates = rates or get_rates(mu)
        tol = tolerances if tolerances is not None else get_config().get_tolerances()
        self.eps_dim = float(tol["eps_dim"])
        self.golden_xatol = float(tol["golden_xatol"])
        self.R = self.rates.radius.R
        self.lnR = self.rates.lnR
        self._windows: Dict[float, SpeedWindow] = {}
        self._hypothesis: Optional[HypothesisReport] = None
        self._lock = threading.Lock()

    # -- phase and window --

    def _check_phase(self, r: float) -> float:
        """ln r, with r within the slack of R snapped to ln R"""
        if r <= 1.0 or r > self.R * (1.0 + _CRITICAL_SLACK):
            raise OutOfPhase(r, self.R)
        return self.lnR if self.is_critical(r) else float(np.log(r))

    def is_critical(self, r: float) -> bool:
        return abs(r - self.R) <= _CRITICAL_SLACK * self.R

    def _endpoint_residual(self, s: float, ln_r: float) -> float:
        # L*(q(s)) - ln r along q(s) = 1/P'(s)
        return s - self.rates.pressure(s) / self.rates.pressure_prime(s) - ln_r

    def speed_window(self, r: float) -> SpeedWindow:
        ln_r = self._check_phase(r)
        with self._lock:
            cached = self._windows.get(r)
        if cached is not None:
            return cached
        c_rw = self.rates.escape_rate()
        edge = self.lnR - self.rates.eps_edge

        if self.is_critical(r):
            lower, s_lower = 0.0, self.lnR
        elif self._endpoint_residual(edge, ln_r) <= 0.0:
            # the endpoint speed sits inside the guard band below ln R
            lower, s_lower = 1.0 / self.rates.pressure_prime(edge), edge
        else:
            s_lower = optimize.brentq(self._endpoint_residual, 0.0, edge, args=(ln_r,), xtol=1e-14)
            lower = 1.0 / self.rates.pressure_prime(s_lower)

        clipped = False
        if self.rates.rate_L_one() <= ln_r:
            upper, s_upper, clipped = 1.0, None, True
        else:
            lo = -self.rates.s_max
            if self._endpoint_residual(lo, ln_r) <= 0.0:
                upper, s_upper = 1.0 / self.rates.pressure_prime(lo), lo
            else:
                s_upper = optimize.brentq(self._endpoint_residual, lo, 0.0, args=(ln_r,), xtol=1e-14)
                upper = 1.0 / self.rates.pressure_prime(s_upper)

        window = SpeedWindow(float(r), float(lower), float(min(upper, 1.0)), float(c_rw),
                             s_lower, s_upper, clipped)
        logger.debug(f"speed_window r={r!r} lower={window.lower!r} upper={window.upper!r}")
        with self._lock:
            self._windows[r] = window
        return window

    def _check_interval(self, r: float, alpha: float, beta: float) -> SpeedWindow:
        if alpha > beta:
            raise ValueError(f"need alpha <= beta, got ({alpha}, {beta})")
        window = self.speed_window(r)
        if not (window.contains(alpha) and window.contains(beta)):
            raise EmptySet(f"[{alpha}, {beta}] is not inside I({r}) = [{window.lower}, {window.upper}]")
        return window

    def _rate(self, q: float) -> float:
        return self.rates.rate_L(min(max(q, 0.0), 1.0))

    # -- dimensions --

    def dim_E(self, r: float, alpha: float, beta: Optional[float] = None) -> float:
        beta = alpha if beta is None else beta
        self._check_interval(r, alpha, beta)
        ln_r = self._check_phase(r)
        value = ln_r - max(self._rate(alpha), self._rate(beta))
        return float(min(max(value, 0.0), ln_r))

    def dim_Lambda_point(self, r: float, alpha: float) -> float:
        ln_r = self._check_phase(r)
        if alpha <= 0.0 and not self.is_critical(r):
            raise ZeroSpeedOffCritical(f"alpha = 0 needs r = R = {self.R!r}, got r = {r!r}")
        self._check_interval(r, alpha, alpha)
        if alpha <= 0.0:
            return self.zero_speed_dimension()
        return float(max(ln_r - self._rate(alpha), 0.0) / alpha)

    def zero_speed_dimension(self, levels: int = 6) -> float:
        """-(L*)'(0): the limit of (ln R - L*(h))/h, Richardson-extrapolated over halving h"""
        # smallest h whose Legendre point stays outside the guard band below ln R
        q_edge = 1.0 / self.rates.pressure_prime(self.lnR - self.rates.eps_edge)
        steps = 1.5 * q_edge * 2.0 ** np.arange(levels - 1, -1, -1)
        table = np.array([(self.lnR - self.rates.rate_L(h)) / h for h in steps])
        for j in range(1, levels):
            table = (2.0 ** j * table[1:] - table[:-1]) / (2.0 ** j - 1.0)
        value = float(table[0])
        logger.debug(f"zero_speed_dimension h=[{steps[-1]:.3g}, {steps[0]:.3g}] value={value!r}")
        return value

    def hypothesis_report(self) -> HypothesisReport:
        if self._hypothesis is None:
            self._hypothesis = self.rates.hypothesis_one()
        return self._hypothesis

    def exact_interval_formula(self) -> bool:
        """Isotropy, or a grid certificate that g <= 0"""
        if self.mu.is_isotropic:
            return True
        return self.hypothesis_report().certified

    def dim_Lambda_interval(self, r: float, alpha: float, beta: float) -> IntervalDimension:
        self._check_interval(r, alpha, beta)
        at_alpha = self.dim_Lambda_point(r, alpha)
        at_beta = self.dim_Lambda_point(r, beta)
        lower = min(at_alpha, at_beta)
        exact = self.exact_interval_formula()
        upper = lower if exact else max(at_alpha, lower)
        return IntervalDimension(float(lower), float(upper), exact)

    def fixed_point_dimension(self, r: float) -> float:
        """Root D of sum_a F_a(r)/(e^D + F_a(r)) = 1"""
        self._check_phase(r)
        F = self.rates.solver.solve(self.R if self.is_critical(r) else r).values

        def residual(D):
            return float(np.sum(F / (np.exp(D) + F))) - 1.0

        hi = float(np.log(F.sum())) + 1.0
        lo = float(np.log(F.min())) - 1.0
        while residual(lo) <= 0.0:
            lo -= 1.0
        return float(optimize.brentq(residual, lo, hi, xtol=1e-15))

    def alpha_star(self, r: float, check: bool = True) -> AlphaStar:
        ln_r = self._check_phase(r)
        pressure_value = self.rates.pressure(ln_r)
        fixed_point = self.fixed_point_dimension(r)

        if self.is_critical(r):
            alpha, golden_value, closed = 0.0, self.dim_Lambda_point(r, 0.0), 0.0
        else:
            window = self.speed_window(r)

            def negative_ratio(a):
                return -(ln_r - self._rate(a)) / a

            res = optimize.minimize_scalar(negative_ratio, bounds=(window.lower, window.c_rw),
                                           method="bounded", options={"xatol": self.golden_xatol})
            alpha, golden_value = float(res.x), float(-res.fun)
            closed = 1.0 / self.rates.pressure_prime(ln_r)

        routes = {"maximum": golden_value, "pressure": pressure_value, "fixed_point": fixed_point}
        result = AlphaStar(float(r), alpha, golden_value, float(closed), routes)
        logger.debug(f"alpha_star r={r!r} alpha={alpha!r} routes={routes}")
        if check and result.spread > self.eps_dim:
            raise DimMismatch(f"dim_H Lambda_{r}", list(routes.values()), self.eps_dim)
        return result

    def tangency_residual(self, r: float) -> float:
        """ln r - L*(a) + a (L*)'(a) at a = a(r)"""
        ln_r = self._check_phase(r)
        alpha = self.alpha_star(r, check=False).alpha
        return float(ln_r - self._rate(alpha) + alpha * self.rates.rate_L_prime(alpha))

    def dimension_curve(self, r_grid: Sequence[float], workers: int = 1) -> np.ndarray:
        """dim_H Lambda_r = P(ln r) along a grid of offspring means"""
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            values = list(pool.map(lambda r: self.rates.pressure(self._check_phase(r)), r_grid))
        return np.asarray(values)

    def spectrum_table(self, r: float, points: Optional[int] = None, workers: int = 1) -> SpectrumTable:
        points = points or int(get_config().get_spectrum_config()["alpha_points"])
        window = self.speed_window(r)
        lo = window.lower
        if lo <= 0.0 and not self.is_critical(r):
            lo = 1e-9
        grid = np.linspace(lo, window.upper, points)
        pairs = [(float(a), float(b)) for i, a in enumerate(grid) for b in grid[i:]]
        exact = self.exact_interval_formula()

        def row(pair):
            a, b = pair
            interval = self.dim_Lambda_interval(r, a, b)
            return a, b, self.dim_E(r, a, b), interval.lower, interval.upper, interval.exact

        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            rows = list(pool.map(row, pairs))
        logger.info(f"spectrum table r={r!r}: {len(rows)} rows, exact={exact}")
        return SpectrumTable(float(r), window, self.mu.is_isotropic, rows)


_spectra: Dict[Tuple[Any, ...], Spectra] = {}
_spectra_lock = threading.Lock()


def get_spectra(mu: StepDistribution) -> Spectra:
    with _spectra_lock:
        spectra = _spectra.get(mu.key)
        if spectra is None:
            spectra = Spectra(mu)
            _spectra[mu.key] = spectra
        return spectra


def clear_spectra():
    with _spectra_lock:
        _spectra.clear()


def speed_window(mu: StepDistribution, r: float) -> SpeedWindow:
    return get_spectra(mu).speed_window(r)


def dim_E(mu: StepDistribution, r: float, alpha: float, beta: Optional[float] = None) -> float:
    return get_spectra(mu).dim_E(r, alpha, beta)


def dim_Lambda_point(mu: StepDistribution, r: float, alpha: float) -> float:
    return get_spectra(mu).dim_Lambda_point(r, alpha)


def dim_Lambda_interval(mu: StepDistribution, r: float, alpha: float, beta: float) -> IntervalDimension:
    return get_spectra(mu).dim_Lambda_interval(r, alpha, beta)


def alpha_star(mu: StepDistribution, r: float) -> Tuple[float, float]:
    result = get_spectra(mu).alpha_star(r)
    return result.alpha, result.dimension
