#!/usr/bin/env python3
"""
Exception hierarchy for the multifractal BRW toolkit
Every failure carries the numbers needed to diagnose it
"""
from typing import Optional, Sequence, Tuple


class MfbrwError(Exception):
    """Base class for all toolkit failures"""


class ConfigError(MfbrwError, ValueError):
    """Configuration violates a documented invariant"""

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class CapExceeded(MfbrwError):
    """A resource cap (sphere, ball, node count, count total) would be breached"""

    def __init__(self, what: str, requested: int, cap: int, partial_depth: Optional[int] = None):
        self.what = what
        self.requested = requested
        self.cap = cap
        self.partial_depth = partial_depth
        msg = f"{what} needs {requested} but cap is {cap}"
        if partial_depth is not None:
            msg += f" (reached depth {partial_depth})"
        super().__init__(msg)


class NoFiniteSolution(MfbrwError):
    """First-passage system has no finite minimal solution (radius beyond R)"""

    def __init__(self, r: float, iterations: int, reason: str):
        self.r = r
        self.iterations = iterations
        self.reason = reason
        super().__init__(f"no finite first-passage solution at r={r!r} after {iterations} iterations: {reason}")


class NearSingular(MfbrwError):
    """Derivative requested inside the guard band below ln R"""

    def __init__(self, s: float, ln_r: float, band: float):
        self.s = s
        self.ln_r = ln_r
        self.band = band
        super().__init__(f"s={s!r} lies within {band:g} of ln R={ln_r!r}; derivative blows up there")


class BracketFailure(MfbrwError):
    """Root bracket endpoints do not straddle a sign change"""

    def __init__(self, what: str, lo: float, hi: float, f_lo: float, f_hi: float):
        self.what = what
        self.bracket = (lo, hi)
        self.residuals = (f_lo, f_hi)
        super().__init__(f"{what}: bracket [{lo!r}, {hi!r}] has residuals {f_lo!r}, {f_hi!r}")


class RootOutOfRange(BracketFailure):
    """s(xi) root search found no sign change on (-S_max, ln R - eps)"""


class NonConvergent(MfbrwError):
    """Iterative solver exhausted its budget"""

    def __init__(self, what: str, iterations: int, best: float, residual: float,
                 bracket: Optional[Tuple[float, float]] = None):
        self.what = what
        self.iterations = iterations
        self.best = best
        self.residual = residual
        self.bracket = bracket
        msg = f"{what} did not converge in {iterations} iterations (best={best!r}, residual={residual:.3e})"
        if bracket is not None:
            msg += f", bracket=[{bracket[0]!r}, {bracket[1]!r}]"
        super().__init__(msg)


class Infeasible(MfbrwError):
    """Constraint set of an optimisation oracle is empty"""


class OracleRefusal(MfbrwError):
    """An oracle was asked for a size it does not support"""


class RouteMismatch(MfbrwError):
    """Two independent computations of the same quantity disagree"""

    def __init__(self, what: str, values: Sequence[float], tolerance: float):
        self.what = what
        self.values = tuple(values)
        self.tolerance = tolerance
        joined = ", ".join(repr(v) for v in self.values)
        super().__init__(f"{what}: routes disagree beyond {tolerance:g}: {joined}")


class DimMismatch(RouteMismatch):
    """The three routes to dim_H Lambda_r disagree"""


class OutOfPhase(MfbrwError, ValueError):
    """Offspring mean outside the transient phase (1, R]"""

    def __init__(self, r: float, big_r: float):
        self.r = r
        self.big_r = big_r
        super().__init__(
            f"r={r!r} is outside (1, R] with R={big_r!r}: the limit set is only studied in the "
            f"transient phase 1 < r <= R (for r > R the walk survives on every finite set)"
        )


class EmptySet(MfbrwError, ValueError):
    """Requested speed interval is not contained in I(r); the level set is empty"""


class ZeroSpeedOffCritical(MfbrwError, ValueError):
    """alpha = 0 is only meaningful at r = R"""
