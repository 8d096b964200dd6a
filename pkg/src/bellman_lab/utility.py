"""The four utility families and the qualitative conditions imposed on them.

Families: power x^p with p in (0,1), logarithmic, exponential -exp(-gamma(x-H))
with a bounded terminal claim H = g(S_T, R_T), and quadratic 2bx - x^2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

POSITIVE_DOMAIN_FAMILIES = ("power", "log")
FAMILIES = ("power", "log", "exponential", "quadratic")


class UtilityDomainError(ValueError):
    """Argument outside the utility's domain (x <= 0 for power/log)."""


@dataclass(frozen=True)
class UtilitySpec:
    family: str
    p: Optional[float] = None
    gamma: Optional[float] = None
    b: Optional[float] = None
    claim: Optional[Callable] = None  # g(s, r), bounded on the state box
    claim_bound: float = 100.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown utility family {self.family!r}")
        if self.family == "power":
            if self.p is None or not 0.0 < self.p < 1.0:
                raise ValueError("power utility needs p strictly inside (0, 1)")
        if self.family == "exponential":
            if self.gamma is None or self.gamma <= 0:
                raise ValueError("exponential utility needs gamma > 0")
        if self.family == "quadratic":
            if self.b is None or self.b <= 0:
                raise ValueError("quadratic utility needs b > 0")

    @property
    def q(self) -> float:
        """Conjugate exponent p / (p - 1); negative for p in (0, 1)."""
        if self.family != "power":
            raise ValueError("q is defined for the power family only")
        return self.p / (self.p - 1.0)

    @property
    def positive_domain(self) -> bool:
        return self.family in POSITIVE_DOMAIN_FAMILIES


def power(p: float) -> UtilitySpec:
    return UtilitySpec("power", p=p)


def logarithmic() -> UtilitySpec:
    return UtilitySpec("log")


def exponential(gamma: float, claim: Optional[Callable] = None,
                claim_bound: float = 100.0) -> UtilitySpec:
    return UtilitySpec("exponential", gamma=gamma, claim=claim, claim_bound=claim_bound)


def quadratic(b: float) -> UtilitySpec:
    return UtilitySpec("quadratic", b=b)


def evaluate(spec: UtilitySpec, x):
    """Return (U, U', U'') at x; U'' < 0 on the domain interior.

    For the exponential family the claim offset is taken as zero here; the
    terminal claim enters only through terminal conditions elsewhere.
    """
    x = np.asarray(x, dtype=float)
    if spec.positive_domain and np.any(x <= 0):
        raise UtilityDomainError(f"{spec.family} utility undefined at x <= 0")
    if spec.family == "power":
        p = spec.p
        return x**p, p * x ** (p - 1), p * (p - 1) * x ** (p - 2)
    if spec.family == "log":
        return np.log(x), 1.0 / x, -1.0 / x**2
    if spec.family == "exponential":
        g = spec.gamma
        e = np.exp(-g * x)
        return -e, g * e, -(g**2) * e
    b = spec.b
    return 2 * b * x - x**2, 2 * b - 2 * x, np.full_like(x, -2.0)


@dataclass
class AsymptoticElasticity:
    """limsup_{x -> inf} x U'(x) / U(x), probed numerically and analytically."""

    applicable: bool
    numeric: Optional[float] = None
    analytic: Optional[float] = None
    satisfied: Optional[bool] = None  # strictly below 1 (sufficient condition)


def asymptotic_elasticity(spec: UtilitySpec) -> AsymptoticElasticity:
    """Estimate the elasticity limit on a geometric grid x in {1e2, ..., 1e8}.

    Only meaningful for families with domain R+; for the others a
    not-applicable flag is returned.
    """
    if not spec.positive_domain:
        return AsymptoticElasticity(applicable=False)
    xs = np.logspace(2, 8, 7)
    u, du, _ = evaluate(spec, xs)
    ratios = xs * du / u
    numeric = float(ratios[-1])  # limsup estimate: value at the largest probe
    analytic = spec.p if spec.family == "power" else 0.0
    return AsymptoticElasticity(applicable=True, numeric=numeric, analytic=analytic,
                                satisfied=analytic < 1.0)


@dataclass
class ConcavityReport:
    passed: bool
    max_rel_error: float
    min_second_derivative: float


def concavity_probe(spec: UtilitySpec, grid, h: float = 1e-4,
                    rel_tol: float = 1e-6) -> ConcavityReport:
    """Check U'' < 0 and that central finite differences reproduce U''.

    The finite-difference stencil is the independent oracle; agreement is
    required to ``rel_tol`` relative at interior grid points.
    """
    grid = np.asarray(grid, dtype=float)
    u0, _, d2 = evaluate(spec, grid)
    step = h * np.maximum(1.0, np.abs(grid))
    up, _, _ = evaluate(spec, grid + step)
    um, _, _ = evaluate(spec, grid - step)
    fd = (up - 2 * u0 + um) / step**2
    rel = np.abs(fd - d2) / np.abs(d2)
    passed = bool(np.all(d2 < 0) and np.all(rel <= rel_tol))
    return ConcavityReport(passed=passed, max_rel_error=float(rel.max()),
                           min_second_derivative=float(d2.min()))
