#!/usr/bin/env python3
"""
Log Perron-Frobenius eigenvalue of the non-backtracking letter matrix

    M[a, b] = exp(lam_a) * 1{b != a^-1}

varrho(lam) = ln of its leading eigenvalue, its gradient, the Legendre transform
rho_star(xi) and a brute-force pair-empirical-measure oracle for rho_star.
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from config import get_config
from errors import BracketFailure, Infeasible, NonConvergent, OracleRefusal

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WeightVector:
    """Letter weights lam in R^{2d}"""
    values: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("weight vector must be finite")
        if len(self.values) % 2 or len(self.values) < 4:
            raise ValueError(f"expected 2d >= 4 entries, got {len(self.values)}")

    @classmethod
    def of(cls, lam: Sequence[float]) -> "WeightVector":
        return cls(np.asarray(lam, dtype=float))

    @property
    def symmetric(self) -> bool:
        v = self.values
        return bool(np.all(v == v[np.arange(len(v)) ^ 1]))


@dataclass(frozen=True)
class PairMeasure:
    """Law pi(a, b) of consecutive letter pairs of a reduced word"""
    pi: np.ndarray

    @property
    def first_marginal(self) -> np.ndarray:
        return self.pi.sum(axis=1)

    @property
    def second_marginal(self) -> np.ndarray:
        return self.pi.sum(axis=0)

    def balanced(self, eps: float = 1e-10) -> bool:
        return bool(np.max(np.abs(self.first_marginal - self.second_marginal)) < eps)


@dataclass(frozen=True)
class RhoStarResult:
    value: float
    lam: np.ndarray
    residual: float
    iterations: int
    boundary: bool = False


def _tolerances() -> Dict[str, Any]:
    return get_config().get_tolerances()


def transfer_matrix(lam: Sequence[float]) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    n = len(lam)
    allowed = np.ones((n, n))
    allowed[np.arange(n), np.arange(n) ^ 1] = 0.0
    return np.exp(lam)[:, None] * allowed


def _pair_terms(rho: float, x: np.ndarray) -> np.ndarray:
    """Per-letter-pair contributions to the eigenvalue equation (pole-free split)"""
    xa, xb = x[0::2], x[1::2]
    root = np.sqrt(xa * xb)
    sym = (xa + xb) / (rho + root)
    gap = (np.sqrt(xa) - np.sqrt(xb)) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        asym = np.where(gap > 0.0, root * gap / ((rho - root) * (rho + root)), 0.0)
    return sym + asym


def _residual(t: float, x: np.ndarray) -> float:
    return float(np.sum(_pair_terms(np.exp(t), x)) - 1.0)


def varrho(lam: Sequence[float], tol: Optional[float] = None, inset: Optional[float] = None) -> float:
    """Largest root of the scalar eigenvalue equation, after shifting by max(lam)"""
    lam = WeightVector.of(lam).values
    tolerances = _tolerances()
    tol = float(tolerances["eps_varrho"]) if tol is None else tol
    inset = float(tolerances["eps_bracket"]) if inset is None else inset

    shift = float(lam.max())
    y = lam - shift
    x = np.exp(y)
    pole = float(np.max(0.5 * (y[0::2] + y[1::2])))
    t_hi = float(np.log(x.sum()))
    f_hi = _residual(t_hi, x)
    if f_hi == 0.0:
        return t_hi + shift

    t_lo, f_lo = pole + inset, _residual(pole + inset, x)
    while f_lo <= 0.0 and inset > 1e-15:
        inset /= 10.0
        t_lo, f_lo = pole + inset, _residual(pole + inset, x)
    if f_lo == 0.0:
        return t_lo + shift
    if not (f_lo > 0.0 > f_hi):
        raise BracketFailure("varrho", t_lo + shift, t_hi + shift, f_lo, f_hi)

    t = optimize.brentq(_residual, t_lo, t_hi, args=(x,), xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500)
    return float(t + shift)


def varrho_power(lam: Sequence[float], tol: Optional[float] = None, max_iter: Optional[int] = None) -> float:
    """ln of the dominant eigenvalue of M by power iteration

    Every 500 sweeps without convergence the iteration restarts from the current
    vector on the squared matrix, which doubles the spectral gap.
    """
    lam = WeightVector.of(lam).values
    tolerances = _tolerances()
    tol = float(tolerances["eps_power"]) if tol is None else tol
    max_iter = int(tolerances["power_max_iter"]) if max_iter is None else max_iter

    shift = float(lam.max())
    A = transfer_matrix(lam - shift)
    scale = float(A.sum(axis=0).max())
    A = A / scale
    power = 1
    v = np.ones(A.shape[0]) / A.shape[0]
    estimate = 0.0
    residual = np.inf
    for iteration in range(1, max_iter + 1):
        w = A @ v
        new_estimate = float(w.sum() / v.sum())
        w = w / w.sum()
        residual = float(np.max(np.abs(A @ w - new_estimate * w)) / max(new_estimate, 1e-300))
        if abs(new_estimate - estimate) <= tol * new_estimate and residual <= tol:
            estimate = new_estimate
            break
        estimate, v = new_estimate, w
        if iteration % 500 == 0:
            A = A @ A
            A = A / float(A.sum(axis=0).max())
            power *= 2
            # rescaling the squared matrix is undone through the Rayleigh estimate below
            estimate = 0.0
    else:
        raise NonConvergent("varrho_power", max_iter, float(np.log(max(estimate, 1e-300))), residual)

    if power > 1:
        # recover the eigenvalue of the original normalised matrix from the eigenvector
        A1 = transfer_matrix(lam - shift) / scale
        estimate = float((A1 @ w).sum() / w.sum())
    logger.debug(f"varrho_power iterations={iteration} squarings={int(np.log2(power))} residual={residual:.3e}")
    return float(np.log(estimate) + np.log(scale) + shift)


def perron_vectors(lam: Sequence[float]) -> Tuple[float, np.ndarray, np.ndarray]:
    """(rho, right, left) PF eigenvectors of M from the eigenvalue equation

    right_a = x_a (rho - x_{a^-1}) / (rho^2 - x_a x_{a^-1}) and left_a = right_a / x_a.
    """
    lam = WeightVector.of(lam).values
    shift = float(lam.max())
    x = np.exp(lam - shift)
    t = varrho(lam) - shift
    rho = float(np.exp(t))
    partner = x[np.arange(len(x)) ^ 1]
    root = np.sqrt(x * partner)
    # x(rho - x') / ((rho - root)(rho + root)) split so equal pairs reduce to x/(rho + x)
    with np.errstate(divide="ignore", invalid="ignore"):
        right = np.where(
            x == partner,
            x / (rho + x),
            x * (rho - partner) / ((rho - root) * (rho + root)),
        )
    left = right / x
    return rho * np.exp(shift), right, left


def varrho_gradient(lam: Sequence[float]) -> np.ndarray:
    """d varrho / d lam_a = l_a r_a / <l, r>"""
    _, right, left = perron_vectors(lam)
    weights = left * right
    return weights / weights.sum()


def varrho_hessian(lam: Sequence[float], h: float = 1e-5) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    n = len(lam)
    H = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        H[:, i] = (varrho_gradient(lam + e) - varrho_gradient(lam - e)) / (2 * h)
    return 0.5 * (H + H.T)


def _check_simplex(xi: np.ndarray, what: str = "xi"):
    if np.any(xi < -1e-12) or abs(xi.sum() - 1.0) > 1e-9:
        raise ValueError(f"{what} must lie in the probability simplex, got {xi}")


def legendre_solve(xi: Sequence[float]) -> RhoStarResult:
    """sup_lam {<xi, lam> - varrho(lam)} + ln(2d - 1) for interior xi"""
    xi = np.asarray(xi, dtype=float)
    _check_simplex(xi)
    tolerances = _tolerances()
    gtol = float(tolerances["rho_star_gtol"])
    max_iter = int(tolerances["rho_star_max_iter"])
    n = len(xi)

    def objective(lam):
        return varrho(lam) - float(np.dot(xi, lam)), varrho_gradient(lam) - xi

    # log-frequency start: the uniform word has gradient uniform at lam = 0
    start = np.log(np.maximum(xi, 1e-300)) - np.log(np.maximum(xi, 1e-300)).mean()
    sol = optimize.minimize(objective, start, jac=True, method="BFGS",
                            options={"gtol": gtol, "maxiter": max_iter})
    lam = sol.x - sol.x.mean()
    iterations = int(sol.nit)
    residual = float(np.max(np.abs(varrho_gradient(lam) - xi)))
    # Newton polish; the pseudo-inverse drops the flat direction lam + c*1
    for _ in range(30):
        if residual < gtol:
            break
        step = np.linalg.pinv(varrho_hessian(lam), rcond=1e-10) @ (varrho_gradient(lam) - xi)
        candidate = lam - step
        cand_res = float(np.max(np.abs(varrho_gradient(candidate) - xi)))
        if cand_res >= residual:
            break
        lam, residual = candidate - candidate.mean(), cand_res
        iterations += 1

    value = float(np.dot(xi, lam) - varrho(lam) + np.log(n - 1))
    if residual > max(gtol, 1e-7):
        raise NonConvergent("rho_star", iterations, value, residual)
    logger.debug(f"rho_star iterations={iterations} residual={residual:.3e} value={value!r}")
    return RhoStarResult(value, lam, residual, iterations)


def rho_star_solve(xi: Sequence[float], boundary_eps: float = 1e-4) -> RhoStarResult:
    """rho_star with the boundary handled by perturbation towards the barycenter"""
    xi = np.asarray(xi, dtype=float)
    _check_simplex(xi)
    if np.min(xi) > 1e-6:
        return legendre_solve(xi)
    barycenter = np.full(len(xi), 1.0 / len(xi))
    coarse = legendre_solve((1 - boundary_eps) * xi + boundary_eps * barycenter)
    fine = legendre_solve((1 - boundary_eps / 2) * xi + boundary_eps / 2 * barycenter)
    value = 2.0 * fine.value - coarse.value
    logger.warning(f"rho_star at boundary point {np.round(xi, 6)}: extrapolated from eps={boundary_eps:g}")
    return RhoStarResult(value, fine.lam, fine.residual, coarse.iterations + fine.iterations, boundary=True)


def rho_star(xi: Sequence[float]) -> float:
    return rho_star_solve(xi).value


def pair_rate(pi: np.ndarray) -> float:
    """I2(pi) = sum pi(a,b) ln(pi(a,b) / (pi_1(a) p(a,b))), p(a,b) = 1{b != a^-1}/(2d-1)"""
    pi = np.asarray(pi, dtype=float)
    n = pi.shape[0]
    p = np.full((n, n), 1.0 / (n - 1))
    p[np.arange(n), np.arange(n) ^ 1] = 0.0
    marg = pi.sum(axis=1)
    mask = pi > 0
    if np.any(mask & (p == 0)):
        return float("inf")
    ref = (marg[:, None] * p)[mask]
    return float(np.sum(pi[mask] * np.log(pi[mask] / ref)))


def pair_measure_rate(nu: Sequence[float], starts: int = 6, seed: int = 0) -> float:
    """min I2(pi) over balanced pair laws with first marginal nu (rank-2 oracle)"""
    nu = np.asarray(nu, dtype=float)
    _check_simplex(nu, "nu")
    n = len(nu)
    if n != 4:
        raise OracleRefusal(f"pair-measure oracle supports rank 2 only (got {n} letters)")
    eps_bal = float(_tolerances()["eps_bal"])

    allowed = [(a, b) for a in range(n) for b in range(n) if b != (a ^ 1)]
    k = len(allowed)
    rows = np.zeros((n, k))
    cols = np.zeros((n, k))
    for j, (a, b) in enumerate(allowed):
        rows[a, j] = 1.0
        cols[b, j] = 1.0
    # one column constraint is implied by the others
    A_eq = np.vstack([rows, cols[:-1]])
    b_eq = np.concatenate([nu, nu[:-1]])

    feas = optimize.linprog(np.zeros(k), A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * k, method="highs")
    if feas.status != 0:
        raise Infeasible(f"no balanced pair law has marginal {nu}")

    log_ref = np.array([np.log(max(nu[a], 1e-300) / (n - 1)) for a, _ in allowed])

    def fun(z):
        z = np.maximum(z, 1e-300)
        return float(np.sum(z * (np.log(z) - log_ref)))

    def jac(z):
        z = np.maximum(z, 1e-300)
        return np.log(z) + 1.0 - log_ref

    rng = np.random.default_rng(seed)
    initial = [np.maximum(feas.x, 1e-6), np.array([nu[a] / (n - 1) for a, _ in allowed])]
    while len(initial) < starts:
        initial.append(rng.dirichlet(np.ones(k)))

    best = np.inf
    best_pi = None
    for z0 in initial:
        sol = optimize.minimize(fun, z0, jac=jac, method="SLSQP",
                                bounds=[(1e-15, 1.0)] * k,
                                constraints=[{"type": "eq", "fun": lambda z: A_eq @ z - b_eq,
                                              "jac": lambda z: A_eq}],
                                options={"ftol": 1e-15, "maxiter": 1000})
        violation = float(np.max(np.abs(A_eq @ sol.x - b_eq)))
        if violation > 100 * eps_bal:
            continue
        if sol.fun < best:
            best, best_pi = float(sol.fun), sol.x
    if best_pi is None:
        raise NonConvergent("pair_measure_rate", starts, np.nan, np.inf)

    pi = np.zeros((n, n))
    for j, (a, b) in enumerate(allowed):
        pi[a, b] = best_pi[j]
    value = pair_rate(pi)
    logger.debug(f"pair_measure_rate nu={np.round(nu, 6)} value={value!r}")
    return value
