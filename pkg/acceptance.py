#!/usr/bin/env python3
"""
Acceptance suite run by `mfbrw check`

Each criterion is a function of a CheckContext returning a CriterionResult;
the verdicts are machine readable and the suite never aborts on a single failure.
"""
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from config import BrwConfig
from errors import RouteMismatch
from first_passage import FirstPassageSolver
from free_group import StepDistribution
from oracles import conditional_profile, free_energy, length_distribution
from perron import pair_measure_rate, rho_star, varrho
from rates import RateFunctions
from simulator import OffspringDistribution, run_replicates
from spectra import Spectra

logger = logging.getLogger(__name__)


@dataclass
class CriterionResult:
    id: int
    title: str
    passed: bool
    details: Dict[str, Any] = field(default_factory=dict)
    elapsed: float = 0.0
    error: Optional[str] = None

    def as_dict(self) -> Dict[str, Any]:
        return {"id": self.id, "title": self.title, "passed": self.passed, "elapsed": round(self.elapsed, 3),
                "details": self.details, "error": self.error}


@dataclass
class CheckContext:
    config: BrwConfig
    tolerances: Dict[str, Any]
    seed: int
    threads: int = 1

    @classmethod
    def from_config(cls, config: BrwConfig) -> "CheckContext":
        sim = config.get_simulation_config()
        return cls(config, dict(config.get_tolerances()), int(sim["seed"]), int(sim["threads"]))

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed, spawn_key=(10_000 + stream,))))

    def random_laws(self, count: int, stream: int, rank: int = 2) -> List[StepDistribution]:
        rng = self.rng(stream)
        return [StepDistribution.random_symmetric(rank, rng) for _ in range(count)]

    def rates(self, mu: StepDistribution) -> RateFunctions:
        return RateFunctions(mu, FirstPassageSolver(mu, self.tolerances), self.tolerances)

    def spectra(self, mu: StepDistribution) -> Spectra:
        return Spectra(mu, self.rates(mu), self.tolerances)


@dataclass(frozen=True)
class Criterion:
    id: int
    title: str
    check: Callable[[CheckContext], Dict[str, Any]]
    slow: bool = False


def parity_level(n: int, q: float, mu_e: float) -> int:
    """Level nearest to qn that |Z_n| can occupy"""
    m = int(np.floor(q * n))
    if mu_e == 0.0 and (n - m) % 2:
        m += 1 if m < n else -1
    return m


# -- criteria --

def _spectral_radius(ctx: CheckContext) -> Dict[str, Any]:
    got2 = FirstPassageSolver(StepDistribution.isotropic(2), ctx.tolerances).spectral_radius().R
    got3 = FirstPassageSolver(StepDistribution.isotropic(3), ctx.tolerances).spectral_radius().R
    err = max(abs(got2 - 2 / np.sqrt(3)), abs(got3 - 3 / np.sqrt(5)))
    return {"passed": err < 1e-8, "R_d2": got2, "R_d3": got3, "error": err}


def _boundary_identity(ctx: CheckContext) -> Dict[str, Any]:
    errs = {}
    for d in (2, 3, 4):
        solver = FirstPassageSolver(StepDistribution.isotropic(d), ctx.tolerances)
        psi = solver.psi(solver.spectral_radius().lnR).values
        errs[d] = float(np.max(np.abs(psi + 0.5 * np.log(2 * d - 1))))
    return {"passed": max(errs.values()) < 1e-8, "errors": errs}


def _critical_eigenvalue(ctx: CheckContext) -> Dict[str, Any]:
    worst = 0.0
    for mu in ctx.random_laws(20, stream=3):
        solver = FirstPassageSolver(mu, ctx.tolerances)
        psi = solver.psi(solver.spectral_radius().lnR).values
        worst = max(worst, abs(varrho(2 * psi)))
    return {"passed": worst < 1e-8, "max_abs_varrho": worst}


def _dual_route(ctx: CheckContext) -> Dict[str, Any]:
    tolerance = float(ctx.tolerances["eps_route"])
    laws = [StepDistribution.isotropic(2)] + ctx.random_laws(5, stream=4)
    grid = np.linspace(0.0, 1.0, 41)
    worst = 0.0
    for mu in laws:
        rates = ctx.rates(mu)
        for q in grid:
            try:
                value = rates.rate_L_minimax(float(q), check=True, route_tolerance=tolerance)
            except RouteMismatch as e:
                return {"passed": False, "mu": repr(mu), "q": float(q), "values": list(e.values),
                        "tolerance": tolerance}
            worst = max(worst, abs(value - rates.rate_L(float(q))))
    return {"passed": worst < tolerance, "max_gap": worst, "tolerance": tolerance}


def _boundary_values(ctx: CheckContext) -> Dict[str, Any]:
    rates = ctx.rates(StepDistribution.isotropic(2))
    c_rw = rates.escape_rate()
    at_zero = abs(rates.rate_L(0.0) - rates.lnR)
    at_speed = abs(rates.rate_L(c_rw))
    at_one = abs(rates.rate_L(1.0) - np.log(4.0 / 3.0))
    return {"passed": at_zero < 1e-8 and at_speed < 1e-8 and at_one < 1e-6,
            "C_RW": c_rw, "err_L0": at_zero, "err_LC": at_speed, "err_L1": at_one}


def _oracle_convergence(ctx: CheckContext) -> Dict[str, Any]:
    mu = StepDistribution.isotropic(2)
    rates = ctx.rates(mu)
    n = 2000
    law = length_distribution(mu, n)
    budget = 5 * np.log(n) / n
    gaps = {}
    for q in (0.2, 0.5, 0.8):
        m = int(np.floor(q * n))
        gaps[q] = abs(law.rate(m) - rates.rate_L(q))
    return {"passed": max(gaps.values()) <= budget, "gaps": gaps, "budget": budget}


def _dimension_routes(ctx: CheckContext) -> Dict[str, Any]:
    eps = float(ctx.tolerances["eps_dim"])
    results = {}
    passed = True
    # 1.2 and 1.5 exceed R at rank 2, so they are checked at rank 4 where R = 4/sqrt(7)
    cases = [(2, (1.05, 1.1, None)), (4, (1.2, 1.5))]
    for rank, grid in cases:
        spectra = ctx.spectra(StepDistribution.isotropic(rank))
        for r in grid:
            r = spectra.R if r is None else r
            star = spectra.alpha_star(r, check=False)
            results[f"d={rank} r={r:.10g}"] = {"alpha": star.alpha, **star.routes}
            passed &= star.spread <= eps
    spectra = ctx.spectra(StepDistribution.isotropic(2))
    critical = spectra.alpha_star(spectra.R, check=False)
    passed &= abs(critical.dimension - 0.5 * np.log(3)) <= eps and critical.alpha == 0.0
    return {"passed": bool(passed), "routes": results}


def _half_dimension(ctx: CheckContext) -> Dict[str, Any]:
    worst = -np.inf
    for mu in ctx.random_laws(20, stream=8):
        spectra = ctx.spectra(mu)
        bound = 0.5 * np.log(2 * mu.rank - 1)
        for r in np.linspace(1.0, spectra.R, 6)[1:]:
            dim = spectra.rates.pressure(min(float(np.log(r)), spectra.lnR))
            worst = max(worst, dim - bound)
    return {"passed": worst <= 1e-9, "max_excess": worst}


def _hypothesis_one(ctx: CheckContext) -> Dict[str, Any]:
    tolerance = float(ctx.config.get_tolerances()["hypothesis_tol"])
    iso = ctx.rates(StepDistribution.isotropic(2)).hypothesis_one(tolerance=1e-8)
    worst = -np.inf
    worst_upper = abs(iso.upper_limit)
    boundary_ok = worst_upper < 1e-2 and iso.lower_limit < 0
    for mu in ctx.random_laws(50, stream=9):
        report = ctx.rates(mu).hypothesis_one()
        worst = max(worst, report.max_g)
        worst_upper = max(worst_upper, abs(report.upper_limit))
        # g -> 0 as s -> ln R, g -> its closed-form limit as s -> -inf
        boundary_ok &= abs(report.upper_limit) < 1e-2
        boundary_ok &= report.lower_limit < 0 and abs(report.lower_limit_sampled - report.lower_limit) < 1e-6
    return {"passed": bool(iso.certified and worst <= tolerance and boundary_ok),
            "isotropic_max_g": iso.max_g, "random_max_g": worst, "max_abs_upper_limit": worst_upper,
            "boundary_limits": bool(boundary_ok)}


def _rho_star_oracle(ctx: CheckContext) -> Dict[str, Any]:
    rng = ctx.rng(10)
    worst = 0.0
    for _ in range(10):
        xi = 0.15 + 0.85 * rng.dirichlet(np.full(4, 4.0))
        xi = xi / xi.sum()
        worst = max(worst, abs(rho_star(xi) - pair_measure_rate(xi)))
    uniform = abs(rho_star(np.full(4, 0.25)))
    return {"passed": worst < 1e-5 and uniform < 1e-9, "max_gap": worst, "uniform": uniform}


def _free_energy(ctx: CheckContext) -> Dict[str, Any]:
    rng = ctx.rng(11)
    n = 10_000
    worst = 0.0
    for _ in range(10):
        lam = rng.normal(size=4)
        worst = max(worst, abs(free_energy(lam, n) - varrho(lam)))
    return {"passed": worst < 10.0 / n, "max_gap": worst, "budget": 10.0 / n}


MANY_TO_ONE_LITERAL = {"n": 20, "replicates": 10_000}


def _many_to_one(ctx: CheckContext) -> Dict[str, Any]:
    acc = ctx.config.get_acceptance_config()
    n, replicates = int(acc["many_to_one_n"]), int(acc["many_to_one_replicates"])
    mu = StepDistribution.isotropic(2)
    offspring = OffspringDistribution.deterministic(2)
    summary = run_replicates(mu, offspring, n, replicates, ctx.seed, ctx.threads)
    mean = summary.mean_counts()
    se = summary.standard_errors()
    law = length_distribution(mu, n)
    expected = offspring.mean ** n * law.probabilities
    z = np.where(se > 0, (mean - expected) / np.maximum(se, 1e-300), 0.0)
    ok = np.abs(mean - expected) <= 4 * se + 1e-9
    literal = n == MANY_TO_ONE_LITERAL["n"] and replicates >= MANY_TO_ONE_LITERAL["replicates"]
    return {"passed": bool(ok.all()), "n": n, "replicates": replicates, "literal_form": literal,
            "literal_size": dict(MANY_TO_ONE_LITERAL), "z_scores": [float(v) for v in z],
            "max_abs_z": float(np.abs(z).max())}


def _level_lln(ctx: CheckContext) -> Dict[str, Any]:
    acc = ctx.config.get_acceptance_config()
    depths, replicates = [int(n) for n in acc["lln_depths"]], int(acc["lln_replicates"])
    mu = StepDistribution.isotropic(2)
    k_max = int(ctx.config.get_offspring_config()["k_max"])
    offspring = OffspringDistribution.truncated_geometric(1.8, k_max)
    c_rw = ctx.rates(mu).escape_rate()
    gaps = {}
    literal = {}
    for n in depths:
        summary = run_replicates(mu, offspring, n, replicates, ctx.seed, ctx.threads)
        m = parity_level(n, c_rw, mu.mu_e)
        law = length_distribution(mu, n)
        # finite-n comparator (1/n) ln E N_{n,m}
        expected = np.log(offspring.mean) + law.log_probabilities[m] / n
        rates = np.array([s.level_rate(m) for s in summary.stats])
        gaps[n] = float(np.median(np.abs(rates - expected)))
        # the limit itself: ln r - L*(C_RW) = ln r
        literal[n] = float(np.median(np.abs(rates - np.log(offspring.mean))))
    ordered = [gaps[n] for n in depths]
    trend = all(b < a for a, b in zip(ordered, ordered[1:]))
    literal_ordered = [literal[n] for n in depths]
    return {"passed": bool(trend and ordered[-1] < 0.05), "depths": depths, "replicates": replicates,
            "median_gap": gaps, "literal_gap": literal,
            "literal_trend": all(b < a for a, b in zip(literal_ordered, literal_ordered[1:])),
            "trend_check": True}


def _conditional_profile(ctx: CheckContext) -> Dict[str, Any]:
    mu = StepDistribution.isotropic(2)
    values = {}
    for n in (200, 400, 800):
        values[n] = conditional_profile(mu, n, n // 2, deltas=(0.2,)).exceedance[0.2]
    ordered = [values[n] for n in (200, 400, 800)]
    return {"passed": bool(ordered[0] > ordered[1] > ordered[2]), "exceedance": values}


def _determinism(ctx: CheckContext) -> Dict[str, Any]:
    from cli import simulate_to_directory
    contents = []
    with tempfile.TemporaryDirectory() as tmp:
        for threads in (1, 2):
            out = os.path.join(tmp, f"threads{threads}")
            overrides = {"simulation": {"n": 8, "replicates": 20, "threads": threads}}
            path = simulate_to_directory(ctx.config, out, overrides)
            with open(path, "rb") as f:
                contents.append(f.read())
    return {"passed": contents[0] == contents[1], "bytes": len(contents[0])}


CRITERIA: List[Criterion] = [
    Criterion(1, "spectral radius closed forms", _spectral_radius),
    Criterion(2, "first-passage boundary identity", _boundary_identity),
    Criterion(3, "critical eigenvalue identity", _critical_eigenvalue),
    Criterion(4, "dual-route rate function", _dual_route, slow=True),
    Criterion(5, "rate function boundary values", _boundary_values),
    Criterion(6, "oracle convergence of L*", _oracle_convergence),
    Criterion(7, "dimension triple agreement", _dimension_routes),
    Criterion(8, "half-dimension bound", _half_dimension, slow=True),
    Criterion(9, "hypothesis I at rank 2", _hypothesis_one, slow=True),
    Criterion(10, "rho* oracle equivalence", _rho_star_oracle, slow=True),
    Criterion(11, "free energy", _free_energy),
    Criterion(12, "many-to-one", _many_to_one, slow=True),
    Criterion(13, "level-set LLN trend", _level_lln, slow=True),
    Criterion(14, "conditional profile exceedance", _conditional_profile),
    Criterion(15, "simulation determinism", _determinism),
]


def list_criteria() -> List[str]:
    return [f"{c.id:2d}  {c.title}{'  (slow)' if c.slow else ''}" for c in CRITERIA]


def run_criterion(criterion: Criterion, ctx: CheckContext) -> CriterionResult:
    start = time.perf_counter()
    try:
        details = criterion.check(ctx)
        passed = bool(details.pop("passed"))
        result = CriterionResult(criterion.id, criterion.title, passed, details)
    except Exception as e:
        logger.debug(f"criterion {criterion.id} raised", exc_info=True)
        result = CriterionResult(criterion.id, criterion.title, False, error=f"{type(e).__name__}: {e}")
    result.elapsed = time.perf_counter() - start
    marker = "✅" if result.passed else "❌"
    print(f"[Check] {marker} {criterion.id:2d} {criterion.title} ({result.elapsed:.1f}s)")
    if not result.passed:
        print(f"[Check]    {result.error or result.details}")
    return result


def run_acceptance(config: BrwConfig, ids: Optional[Sequence[int]] = None,
                   include_slow: bool = True) -> List[CriterionResult]:
    ctx = CheckContext.from_config(config)
    selected = [c for c in CRITERIA if (ids is None or c.id in ids) and (include_slow or not c.slow)]
    return [run_criterion(c, ctx) for c in selected]
