"""Finite-difference solvers for the one-dimensional Markov value PDEs.

All equations are backward parabolic problems on a truncated interval,

    v_t + 1/2 a(y) v_yy + m(y) v_y + c(y) v + f(y) = 0,    v(T, y) given,

stepped with Crank-Nicolson and "linearity" boundaries (vanishing second
spatial derivative at both edges).  The semilinear power-Bellman variant adds
an explicit quadratic gradient term.  Price equations use the log-price
coordinate; factor equations use the raw factor.

``feynman_kac_mc`` is the independent probabilistic oracle: it simulates the
underlying diffusion forward from probe points and averages the exponential
functional directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_banded

from bellman_lab.market import path_stream


class GridResolutionError(RuntimeError):
    """Solution left its admissible range; the grid needs refinement."""


LINEAR_KINDS = ("almost_complete_power", "factor_power", "log_linear")


@dataclass(frozen=True)
class PdeSpec:
    """Backward parabolic problem on [y_lo, y_hi] x [0, T].

    ``diffusion`` is the full second-order coefficient a(y) (the equation
    carries a(y)/2 * v_yy).  ``positive`` marks multiplicative kinds whose
    solution must stay strictly positive.
    """

    kind: str
    T: float
    y_lo: float
    y_hi: float
    n_space: int
    n_time: int
    diffusion: Callable
    drift: Callable
    terminal: Callable
    potential: Optional[Callable] = None
    source: Optional[Callable] = None
    coord: str = "r"  # 'log_s' or 'r'
    positive: bool = True
    # semilinear extras: nonlinear term coef*(grad_load*v_y + theta*v)^2 / v
    nonlinear_coef: Optional[float] = None
    theta: Optional[Callable] = None
    grad_load: Optional[Callable] = None

    def __post_init__(self):
        if self.y_lo >= self.y_hi:
            raise ValueError("need y_lo < y_hi")
        if self.n_space < 16 or self.n_time < 16:
            raise ValueError("grid resolutions must be >= 16")

    def refined(self, factor: int = 2) -> "PdeSpec":
        from dataclasses import replace
        return replace(self, n_space=(self.n_space - 1) * factor + 1,
                       n_time=self.n_time * factor)


@dataclass
class GridFunction:
    """Values on a (time, space) grid; linear interpolation in space,
    previous-knot lookup in time."""

    times: np.ndarray  # (n_time+1,)
    space: np.ndarray  # (n_space,)
    values: np.ndarray  # (n_time+1, n_space)
    coord: str = "r"

    def __call__(self, t, y):
        idx = int(np.searchsorted(self.times, t + 1e-12, side="right") - 1)
        idx = min(max(idx, 0), len(self.times) - 1)
        return np.interp(y, self.space, self.values[idx])

    def space_derivative(self) -> "GridFunction":
        dv = np.gradient(self.values, self.space, axis=1)
        return GridFunction(times=self.times, space=self.space, values=dv,
                            coord=self.coord)


def _operator_bands(spec: PdeSpec):
    """Tridiagonal bands (sub, diag, super) of the spatial operator A with
    vanishing-second-derivative boundary rows (first-order one-sided v_y)."""
    y = np.linspace(spec.y_lo, spec.y_hi, spec.n_space)
    h = y[1] - y[0]
    a = np.asarray(spec.diffusion(y), dtype=float) * np.ones_like(y)
    m = np.asarray(spec.drift(y), dtype=float) * np.ones_like(y)
    c = (np.asarray(spec.potential(y), dtype=float) * np.ones_like(y)
         if spec.potential is not None else np.zeros_like(y))
    lower = np.zeros_like(y)
    diag = np.zeros_like(y)
    upper = np.zeros_like(y)
    # interior rows
    lower[1:-1] = 0.5 * a[1:-1] / h**2 - m[1:-1] / (2 * h)
    diag[1:-1] = -a[1:-1] / h**2 + c[1:-1]
    upper[1:-1] = 0.5 * a[1:-1] / h**2 + m[1:-1] / (2 * h)
    # boundary rows: v_yy = 0, one-sided v_y
    diag[0] = -m[0] / h + c[0]
    upper[0] = m[0] / h
    lower[-1] = -m[-1] / h
    diag[-1] = m[-1] / h + c[-1]
    return y, h, (lower, diag, upper)


def _apply_tridiag(bands, v):
    lower, diag, upper = bands
    out = diag * v
    out[:-1] += upper[:-1] * v[1:]
    out[1:] += lower[1:] * v[:-1]
    return out


def _banded_matrix(bands, scale, shift):
    """Banded form of (shift*I + scale*A) for scipy.linalg.solve_banded."""
    lower, diag, upper = bands
    n = len(diag)
    ab = np.zeros((3, n))
    ab[0, 1:] = scale * upper[:-1]
    ab[1] = shift + scale * diag
    ab[2, :-1] = scale * lower[1:]
    return ab


def solve_linear(spec: PdeSpec) -> GridFunction:
    """Crank-Nicolson time stepping backward from the terminal data."""
    if spec.kind not in LINEAR_KINDS:
        raise ValueError(f"solve_linear expects a linear kind, got {spec.kind!r}")
    y, _, bands = _operator_bands(spec)
    dt = spec.T / spec.n_time
    times = np.linspace(0.0, spec.T, spec.n_time + 1)
    values = np.empty((spec.n_time + 1, spec.n_space))
    values[-1] = spec.terminal(y)
    f = (np.asarray(spec.source(y), dtype=float) * np.ones_like(y)
         if spec.source is not None else None)
    lhs = _banded_matrix(bands, -0.5 * dt, 1.0)
    for k in range(spec.n_time - 1, -1, -1):
        rhs = values[k + 1] + 0.5 * dt * _apply_tridiag(bands, values[k + 1])
        if f is not None:
            rhs = rhs + dt * f
        values[k] = solve_banded((1, 1), lhs, rhs)
    if spec.positive and values.min() <= 0:
        raise GridResolutionError(
            f"solution lost positivity (min {values.min():.3e}); refine the grid "
            f"(try n_space={2 * spec.n_space}, n_time={2 * spec.n_time})"
        )
    return GridFunction(times=times, space=y, values=values, coord=spec.coord)


def solve_semilinear_power(spec: PdeSpec) -> GridFunction:
    """Semi-implicit stepping for the semilinear power-Bellman equation.

    Linear transport/diffusion is Crank-Nicolson implicit; the quadratic
    gradient term coef*(g1 v_y + theta v)^2 / v is taken explicitly from the
    previous (later-time) level with central-difference v_y.
    """
    if spec.nonlinear_coef is None or spec.theta is None:
        raise ValueError("semilinear spec needs nonlinear_coef and theta")
    y, h, bands = _operator_bands(spec)
    dt = spec.T / spec.n_time
    times = np.linspace(0.0, spec.T, spec.n_time + 1)
    theta = np.asarray(spec.theta(y), dtype=float) * np.ones_like(y)
    g1 = (np.asarray(spec.grad_load(y), dtype=float) * np.ones_like(y)
          if spec.grad_load is not None else np.zeros_like(y))
    values = np.empty((spec.n_time + 1, spec.n_space))
    values[-1] = spec.terminal(y)
    lhs = _banded_matrix(bands, -0.5 * dt, 1.0)
    for k in range(spec.n_time - 1, -1, -1):
        v = values[k + 1]
        v_y = np.gradient(v, h)
        nonlinear = spec.nonlinear_coef * (g1 * v_y + theta * v) ** 2 / v
        rhs = v + 0.5 * dt * _apply_tridiag(bands, v) - dt * nonlinear
        values[k] = solve_banded((1, 1), lhs, rhs)
        if values[k].min() < 1e-10:
            raise GridResolutionError(
                f"semilinear solution below 1e-10 at t={times[k]:.4f}; "
                f"refine the grid or shrink the domain"
            )
    return GridFunction(times=times, space=y, values=values, coord=spec.coord)


# ---------------------------------------------------------------------------
# Monte Carlo oracle
# ---------------------------------------------------------------------------

@dataclass
class ProbeTable:
    times: np.ndarray
    states: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_paths: int


def feynman_kac_mc(spec: PdeSpec, n_paths: int, seed: int,
                   probe_times=None, probe_states=None,
                   mc_steps: Optional[int] = None) -> ProbeTable:
    """Probabilistic representation of the linear problems.

    For each probe point (t0, y0) the diffusion dY = m dt + sqrt(a) dW is
    simulated forward to T (Euler) and the functional

        exp(int c(Y) du) * terminal(Y_T) + int f(Y_u) exp(int_t^u c) du

    is averaged.  One counter-based random stream per probe, keyed by
    (seed, probe index), keeps results reproducible.
    """
    if spec.kind not in LINEAR_KINDS:
        raise ValueError("feynman_kac_mc expects a linear kind")
    if probe_times is None:
        probe_times = [0.0]
    if probe_states is None:
        probe_states = np.linspace(spec.y_lo, spec.y_hi, 9)[1:-1]
    probes = [(float(t0), float(y0)) for t0 in probe_times for y0 in probe_states]
    steps = mc_steps if mc_steps is not None else spec.n_time
    mean = np.empty(len(probes))
    stderr = np.empty(len(probes))
    for i, (t0, y0) in enumerate(probes):
        n_sub = max(1, int(math.ceil(steps * (spec.T - t0) / spec.T)))
        dt = (spec.T - t0) / n_sub
        rng = path_stream(seed, i)
        y = np.full(n_paths, y0)
        log_weight = np.zeros(n_paths)
        acc = np.zeros(n_paths)
        for j in range(n_sub):
            if spec.source is not None:
                acc += spec.source(y) * np.exp(log_weight) * dt
            if spec.potential is not None:
                log_weight += spec.potential(y) * dt
            dw = rng.standard_normal(n_paths) * np.sqrt(dt)
            y = y + spec.drift(y) * dt + np.sqrt(spec.diffusion(y)) * dw
        samples = np.exp(log_weight) * spec.terminal(y) + acc
        mean[i] = samples.mean()
        stderr[i] = samples.std(ddof=1) / np.sqrt(n_paths)
    arr = np.asarray(probes)
    return ProbeTable(times=arr[:, 0], states=arr[:, 1], mean=mean, stderr=stderr,
                      n_paths=n_paths)


# ---------------------------------------------------------------------------
# Spec builders for the built-in reductions (time-homogeneous coefficients)
# ---------------------------------------------------------------------------

def _as_fn(value):
    if callable(value):
        return value
    return lambda y: np.full_like(np.asarray(y, dtype=float), float(value))


def almost_complete_power_spec(sigma, theta, q: float, s0: float, T: float,
                               n_space: int = 201, n_time: int = 200,
                               width_sd: float = 5.0) -> PdeSpec:
    """Linear price-equation for the power Case-1 route, in y = log s.

    The underlying price is a local martingale under the q-optimal measure
    change, so the log-price drift is -sigma^2/2.  ``sigma`` and ``theta``
    may be constants or functions of s.
    """
    sig = sigma if callable(sigma) else (lambda s: np.full_like(s, float(sigma)))
    th = theta if callable(theta) else (lambda s: np.full_like(s, float(theta)))

    def a(y):
        return sig(np.exp(y)) ** 2

    def m(y):
        return -0.5 * sig(np.exp(y)) ** 2

    def c(y):
        return 0.5 * q * (q - 1.0) * th(np.exp(y)) ** 2

    sd = float(np.max(sig(np.atleast_1d(float(s0))))) * np.sqrt(T)
    center = np.log(s0)
    return PdeSpec(kind="almost_complete_power", T=T,
                   y_lo=center - width_sd * sd, y_hi=center + width_sd * sd,
                   n_space=n_space, n_time=n_time, diffusion=a, drift=m,
                   potential=c, terminal=lambda y: np.ones_like(y),
                   coord="log_s", positive=True)


def _ou_domain(kappa: float, mean: float, sigma_perp: float, r0: float, T: float,
               width_sd: float):
    m_T = mean + (r0 - mean) * np.exp(-kappa * T)
    var_T = sigma_perp**2 * (1 - np.exp(-2 * kappa * T)) / (2 * kappa)
    sd = np.sqrt(var_T)
    lo = min(m_T, r0) - width_sd * sd
    hi = max(m_T, r0) + width_sd * sd
    return lo, hi


def factor_power_spec(kappa: float, mean: float, sigma_perp: float, theta,
                      q: float, r0: float, T: float, n_space: int = 201,
                      n_time: int = 200, width_sd: float = 5.0) -> PdeSpec:
    """Linear factor-equation for the independent-factor power case."""
    th = _as_fn(theta)
    lo, hi = _ou_domain(kappa, mean, sigma_perp, r0, T, width_sd)
    return PdeSpec(kind="factor_power", T=T, y_lo=lo, y_hi=hi,
                   n_space=n_space, n_time=n_time,
                   diffusion=lambda y: np.full_like(y, sigma_perp**2),
                   drift=lambda y: kappa * (mean - y),
                   potential=lambda y: -0.5 * q * th(y) ** 2,
                   terminal=lambda y: np.ones_like(y),
                   coord="r", positive=True)


def log_linear_factor_spec(kappa: float, mean: float, sigma_perp: float, theta,
                           r0: float, T: float, n_space: int = 201,
                           n_time: int = 200, width_sd: float = 5.0) -> PdeSpec:
    """Additive log-utility factor equation: source theta^2/2, terminal 0.

    This is the form consistent with the additive closed-form representation
    v(t, r) = E[int_t^T theta(R_u)^2 / 2 du | R_t = r].
    """
    th = _as_fn(theta)
    lo, hi = _ou_domain(kappa, mean, sigma_perp, r0, T, width_sd)
    return PdeSpec(kind="log_linear", T=T, y_lo=lo, y_hi=hi,
                   n_space=n_space, n_time=n_time,
                   diffusion=lambda y: np.full_like(y, sigma_perp**2),
                   drift=lambda y: kappa * (mean - y),
                   source=lambda y: 0.5 * th(y) ** 2,
                   terminal=lambda y: np.zeros_like(y),
                   coord="r", positive=False)


def semilinear_power_price_spec(mu: float, sigma, q: float, s0: float, T: float,
                                n_space: int = 201, n_time: int = 200,
                                width_sd: float = 5.0) -> PdeSpec:
    """One-factor-free semilinear Bellman equation in y = log s.

    Under the actual measure the log-price drift is mu - sigma^2/2 and the
    nonlinear term is (q/2)(sigma v_y + theta v)^2 / v with theta = mu/sigma.
    """
    sig = sigma if callable(sigma) else (lambda s: np.full_like(s, float(sigma)))

    def a(y):
        return sig(np.exp(y)) ** 2

    def m(y):
        return mu - 0.5 * sig(np.exp(y)) ** 2

    def th(y):
        return mu / sig(np.exp(y))

    sd = float(np.max(sig(np.atleast_1d(float(s0))))) * np.sqrt(T)
    center = np.log(s0)
    return PdeSpec(kind="semilinear_power", T=T,
                   y_lo=center - width_sd * sd, y_hi=center + width_sd * sd,
                   n_space=n_space, n_time=n_time, diffusion=a, drift=m,
                   terminal=lambda y: np.ones_like(y), coord="log_s",
                   positive=True, nonlinear_coef=0.5 * q, theta=th,
                   grad_load=lambda y: sig(np.exp(y)))


def semilinear_power_factor_spec(kappa: float, mean: float, sigma_perp: float,
                                 theta, q: float, r0: float, T: float,
                                 n_space: int = 201, n_time: int = 200,
                                 width_sd: float = 5.0) -> PdeSpec:
    """Semilinear form of the independent-factor equation.

    With no price dependence and no factor loading on the asset Brownian
    motion the gradient term vanishes, so this must agree with the linear
    factor solver; kept as a consistency route.
    """
    th = _as_fn(theta)
    lo, hi = _ou_domain(kappa, mean, sigma_perp, r0, T, width_sd)
    return PdeSpec(kind="semilinear_power", T=T, y_lo=lo, y_hi=hi,
                   n_space=n_space, n_time=n_time,
                   diffusion=lambda y: np.full_like(y, sigma_perp**2),
                   drift=lambda y: kappa * (mean - y),
                   terminal=lambda y: np.ones_like(y), coord="r",
                   positive=True, nonlinear_coef=0.5 * q, theta=th,
                   grad_load=lambda y: np.zeros_like(y))
