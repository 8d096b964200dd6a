"""Backward regression Monte Carlo solver for scalar quadratic-generator BSDEs.

The value factor V solves, in Brownian coordinates,

    dV_t = g(V_t, Z_t) dt + Z_t dW^l_t + dL_t,    g = coef * |Z + theta V|^2 / V,

with coef = q/2 (power), 1/2 (exponential), 1 (quadratic), and terminal data
V_T = 1 or exp(gamma H).  The integrand against dM is reparametrized as
Z = diag(S) sigma_l' phi so the generator contracts against dt instead of the
state-dependent d<M>.

Backward induction: at each knot, Z is estimated by regressing the martingale
increment of V against scaled Brownian increments on a polynomial basis of the
Markov state, and V by the conditional-expectation regression of the next
value plus driver * dt, iterated a few Picard steps with the driver implicit
in V.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from bellman_lab import market
from bellman_lab.market import MarketModel, PathEnsemble

DRIVER_COEF = {"power": None, "exponential": 0.5, "quadratic": 1.0}


class SolverQualityError(RuntimeError):
    """Raised when positivity-floor activations exceed the quality budget."""


# ---------------------------------------------------------------------------
# Regression kernel (shared with the valuation module)
# ---------------------------------------------------------------------------

def polynomial_basis(states: np.ndarray, degree: int) -> np.ndarray:
    """Monomials of total degree <= degree in the columns of ``states``."""
    m, j = states.shape
    cols = [np.ones(m)]
    for deg in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(j), deg):
            col = np.ones(m)
            for idx in combo:
                col = col * states[:, idx]
            cols.append(col)
    return np.column_stack(cols)


def fit_conditional(y: np.ndarray, states: np.ndarray, degree: int) -> np.ndarray:
    """Least-squares projection of y on the polynomial basis; returns fitted values.

    Degenerate designs (e.g. all paths at the same state) fall back to lower
    degrees, down to the plain mean, with a warning.
    """
    for deg in range(degree, -1, -1):
        if deg == 0:
            if degree > 0:
                warnings.warn("regression basis degenerate; falling back to the mean",
                              RuntimeWarning, stacklevel=2)
            return np.full_like(y, y.mean())
        basis = polynomial_basis(states, deg)
        coef, _, rank, _ = np.linalg.lstsq(basis, y, rcond=None)
        if rank == basis.shape[1]:
            if deg < degree:
                warnings.warn(f"regression matrix rank-deficient; basis degree "
                              f"reduced to {deg}", RuntimeWarning, stacklevel=2)
            return basis @ coef
    raise AssertionError("unreachable")


def markov_states(ensemble: PathEnsemble, knot: int) -> np.ndarray:
    """Regression state at a knot: (log S, R) columns."""
    return np.column_stack([np.log(ensemble.S[:, knot]), ensemble.R[:, knot]])


# ---------------------------------------------------------------------------
# Problem / solution containers
# ---------------------------------------------------------------------------

@dataclass
class BSDEProblem:
    driver_kind: str  # 'power' | 'exponential' | 'quadratic'
    terminal: np.ndarray  # (n_paths,) positive terminal values
    model: MarketModel
    ensemble: PathEnsemble
    q: Optional[float] = None  # required for the power driver

    def __post_init__(self):
        if self.driver_kind not in DRIVER_COEF:
            raise ValueError(f"unknown driver kind {self.driver_kind!r}")
        if self.driver_kind == "power" and self.q is None:
            raise ValueError("power driver needs the conjugate exponent q")
        self.terminal = np.asarray(self.terminal, dtype=float)
        if np.any(self.terminal <= 0):
            raise ValueError("terminal values must be strictly positive")

    @property
    def coef(self) -> float:
        return 0.5 * self.q if self.driver_kind == "power" else DRIVER_COEF[self.driver_kind]


@dataclass
class BSDESolution:
    times: np.ndarray
    V: np.ndarray  # (n_paths, N+1)
    Z: np.ndarray  # (n_paths, N, d)
    residual_orthogonal: np.ndarray  # (N,) per-step regression residual norm
    floor_count: int
    floor_fraction: float
    diagnostics: dict = field(default_factory=dict)


def driver_rate(kind: str, v, z, theta, q: Optional[float] = None):
    """Drift per unit time of the value factor: coef * |z + theta v|^2 / v.

    ``v`` is clamped away from zero by the caller; here only the algebra.
    ``z`` and ``theta`` may be (m,) scalars-per-path or (m, d) vectors.
    """
    coef = 0.5 * q if kind == "power" else DRIVER_COEF[kind]
    z = np.asarray(z, dtype=float)
    theta = np.asarray(theta, dtype=float)
    v = np.asarray(v, dtype=float)
    resid = z + theta * (v[..., None] if z.ndim > v.ndim else v)
    sq = np.sum(resid**2, axis=-1) if resid.ndim > v.ndim else resid**2
    return coef * sq / v


def solve(problem: BSDEProblem, basis_degree: int = 3, picard_iters: int = 3,
          floor_budget: float = 0.01) -> BSDESolution:
    """Backward induction with least-squares conditional expectations.

    Raises SolverQualityError when positivity-floor activations exceed
    ``floor_budget`` as a fraction of all (path, knot) samples.
    """
    ens = problem.ensemble
    if ens.n_paths < 1000:
        raise ValueError("need at least 1e3 paths for the regression solver")
    model = problem.model
    N, dt = ens.grid.n_steps, ens.grid.dt
    d = model.d
    eps_v = 1e-8 * problem.terminal.min()
    theta = market.theta_on_paths(model, ens)  # (n_paths, N, d)

    V = np.empty((ens.n_paths, N + 1))
    Z = np.zeros((ens.n_paths, N, d))
    resid_orth = np.zeros(N)
    V[:, N] = problem.terminal
    floor_count = 0

    for k in range(N - 1, -1, -1):
        v_next = V[:, k + 1]
        if k == 0:
            e_v = np.full_like(v_next, v_next.mean())
        else:
            states = markov_states(ens, k)
            e_v = fit_conditional(v_next, states, basis_degree)
        mart = v_next - e_v
        dWl = ens.dW[:, k, :d]
        for i in range(d):
            y = mart * dWl[:, i] / dt
            if k == 0:
                Z[:, k, i] = y.mean()
            else:
                Z[:, k, i] = fit_conditional(y, states, basis_degree)
        # orthogonal remainder: martingale noise not explained by Z dW^l
        resid_orth[k] = float(np.sqrt(np.mean(
            (mart - np.sum(Z[:, k] * dWl, axis=-1)) ** 2)))
        v = e_v.copy()
        for _ in range(picard_iters):
            v_cl = np.maximum(v, eps_v)
            v_new = e_v - dt * driver_rate(problem.driver_kind, v_cl, Z[:, k],
                                           theta[:, k], q=problem.q)
            if np.max(np.abs(v_new - v)) > 10.0:
                raise SolverQualityError(f"Picard iteration diverged at knot {k}")
            v = v_new
        low = v < eps_v
        floor_count += int(low.sum())
        V[:, k] = np.maximum(v, eps_v)

    floor_fraction = floor_count / (ens.n_paths * N)
    if floor_fraction > floor_budget:
        raise SolverQualityError(
            f"positivity floor active on {floor_fraction:.2%} of samples "
            f"(budget {floor_budget:.2%})"
        )
    diags = {"eps_v": eps_v, "basis_degree": basis_degree,
             "picard_iters": picard_iters,
             "v_min": float(V.min()), "v_max": float(V.max())}
    return BSDESolution(times=ens.grid.knots, V=V, Z=Z,
                        residual_orthogonal=resid_orth,
                        floor_count=floor_count, floor_fraction=floor_fraction,
                        diagnostics=diags)


def value_curve(solution: BSDESolution) -> np.ndarray:
    """Per-knot cross-path (t, mean V, stderr) table, shape (N+1, 3)."""
    mean = solution.V.mean(axis=0)
    stderr = solution.V.std(axis=0, ddof=1) / np.sqrt(solution.V.shape[0])
    return np.column_stack([solution.times, mean, stderr])
