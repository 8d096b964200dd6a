"""Diffusion market model: joint asset/factor simulation and semimartingale primitives.

The model is the system

    dS = diag(S) (mu dt + sigma_l dW^l)
    dR = b dt + delta dW^l + sigma_perp dW^perp

with d assets driven by the first d Brownian coordinates and n-d factors
loading on both blocks.  Asset paths are generated with a log-Euler step
(exact exponential update of log S), factors with plain Euler, so prices are
positive by construction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

_KEY_MASK = (1 << 64) - 1


class ModelValidationError(ValueError):
    """Raised when a market model violates its declared invariants."""


class SingularVolatilityError(np.linalg.LinAlgError):
    """Raised when sigma_l is (numerically) singular at a requested state."""


class StrategyEvaluationError(RuntimeError):
    """Raised when a strategy rule produces NaN holdings."""


# Coefficient functions are vectorized over a leading batch axis:
#   mu(t, s, r)        -> (m, d)
#   sigma_l(t, s, r)   -> (m, d, d)
#   b(t, s, r)         -> (m, k)          k = n - d
#   delta(t, s, r)     -> (m, k, d)
#   sigma_perp(t, s, r)-> (m, k, k)
Coefficient = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid 0 = t_0 < ... < t_N = T."""

    T: float
    n_steps: int

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("horizon T must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def knots(self) -> np.ndarray:
        k = np.arange(self.n_steps + 1) * self.dt
        k[-1] = self.T  # exact endpoint
        return k


@dataclass(frozen=True)
class MarketModel:
    """Coefficient functions and dimensions of the asset/factor diffusion system.

    ``mpr_structure`` records how the market price of risk depends on the
    state: 'deterministic' (constant in (s, r)), 'factor_only' (depends on r
    but not s, with factors unhedgeable), or 'price_dependent'.  The closed
    form Case selectors consult this flag.
    """

    d: int
    n: int
    mu: Coefficient
    sigma_l: Coefficient
    s0: np.ndarray
    r0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    b: Optional[Coefficient] = None
    delta: Optional[Coefficient] = None
    sigma_perp: Optional[Coefficient] = None
    mpr_structure: str = "price_dependent"
    ellipticity_floor: float = 1e-8
    check_ellipticity: bool = True
    state_box: tuple = ((0.2, 5.0), (-3.0, 3.0))  # (s-range multiplier of s0, r-range)

    def __post_init__(self):
        if self.n < self.d or self.d < 1:
            raise ModelValidationError("need n >= d >= 1")
        s0 = np.atleast_1d(np.asarray(self.s0, dtype=float))
        r0 = np.atleast_1d(np.asarray(self.r0, dtype=float))
        object.__setattr__(self, "s0", s0)
        object.__setattr__(self, "r0", r0)
        if s0.shape != (self.d,):
            raise ModelValidationError(f"s0 must have shape ({self.d},)")
        if np.any(s0 <= 0):
            raise ModelValidationError("initial asset prices must be positive")
        if r0.shape != (self.k,):
            raise ModelValidationError(f"r0 must have shape ({self.k},)")
        if self.k > 0 and (self.b is None or self.sigma_perp is None):
            raise ModelValidationError("factor models need b and sigma_perp")

    @property
    def k(self) -> int:
        return self.n - self.d

    def coefficients(self, t: float, s: np.ndarray, r: np.ndarray):
        """Evaluate all coefficients at a batch of states."""
        m = s.shape[0]
        mu = self.mu(t, s, r)
        sl = self.sigma_l(t, s, r)
        if self.k == 0:
            b = np.zeros((m, 0))
            dl = np.zeros((m, 0, self.d))
            sp = np.zeros((m, 0, 0))
        else:
            b = self.b(t, s, r)
            dl = self.delta(t, s, r) if self.delta is not None else np.zeros((m, self.k, self.d))
            sp = self.sigma_perp(t, s, r)
        return mu, sl, b, dl, sp

    def full_sigma(self, t: float, s: np.ndarray, r: np.ndarray) -> np.ndarray:
        """The n x n block volatility [[sigma_l, 0], [delta, sigma_perp]]."""
        m = s.shape[0]
        _, sl, _, dl, sp = self.coefficients(t, s, r)
        sig = np.zeros((m, self.n, self.n))
        sig[:, : self.d, : self.d] = sl
        if self.k > 0:
            sig[:, self.d :, : self.d] = dl
            sig[:, self.d :, self.d :] = sp
        return sig


@dataclass
class PathEnsemble:
    """Simulated joint asset/factor paths on a uniform grid.

    Immutable after construction by convention; all downstream operations are
    pure transformations.
    """

    grid: TimeGrid
    n_paths: int
    seed: int
    S: np.ndarray  # (n_paths, N+1, d)
    R: np.ndarray  # (n_paths, N+1, k)
    dW: np.ndarray  # (n_paths, N, n)
    model: MarketModel
    metadata: dict = field(default_factory=dict)


@dataclass
class StrategyRule:
    """State-feedback, constant-proportion, or precomputed portfolio rule.

    ``clip_floor`` is the admissibility floor: when set, holdings are scaled
    down step-wise so integrated wealth never drops below it.
    """

    kind: str  # 'feedback' | 'constant_proportion' | 'pathwise'
    feedback: Optional[Callable] = None  # (t, x, s, r) -> (m, d) share holdings
    proportions: Optional[np.ndarray] = None  # (d,) wealth fractions
    pathwise: Optional[np.ndarray] = None  # (n_paths, N, d)
    clip_floor: Optional[float] = None

    def holdings(self, t: float, x: np.ndarray, s: np.ndarray, r: np.ndarray,
                 step: Optional[int] = None) -> np.ndarray:
        if self.kind == "feedback":
            return np.asarray(self.feedback(t, x, s, r), dtype=float)
        if self.kind == "constant_proportion":
            return self.proportions[None, :] * x[:, None] / s
        if self.kind == "pathwise":
            return self.pathwise[:, step, :]
        raise ValueError(f"unknown strategy kind {self.kind!r}")


def feedback_rule(fn: Callable, clip_floor: Optional[float] = None) -> StrategyRule:
    return StrategyRule(kind="feedback", feedback=fn, clip_floor=clip_floor)


def constant_proportion(fractions, clip_floor: Optional[float] = None) -> StrategyRule:
    return StrategyRule(kind="constant_proportion",
                        proportions=np.atleast_1d(np.asarray(fractions, dtype=float)),
                        clip_floor=clip_floor)


def pathwise_rule(holdings: np.ndarray, clip_floor: Optional[float] = None) -> StrategyRule:
    return StrategyRule(kind="pathwise", pathwise=np.asarray(holdings, dtype=float),
                        clip_floor=clip_floor)


def zero_rule(d: int = 1) -> StrategyRule:
    return constant_proportion(np.zeros(d))


def scale_rule(rule: StrategyRule, c: float) -> StrategyRule:
    """Scale a rule's holdings by a constant factor (for perturbation studies)."""
    if rule.kind == "feedback":
        base = rule.feedback
        return StrategyRule("feedback", feedback=lambda t, x, s, r: c * base(t, x, s, r),
                            clip_floor=rule.clip_floor)
    if rule.kind == "constant_proportion":
        return StrategyRule("constant_proportion", proportions=c * rule.proportions,
                            clip_floor=rule.clip_floor)
    return StrategyRule("pathwise", pathwise=c * rule.pathwise, clip_floor=rule.clip_floor)


# ---------------------------------------------------------------------------
# Random numbers: one counter-based stream per path, keyed by (seed, path).
# Parallel and sequential generation therefore produce identical ensembles.
# ---------------------------------------------------------------------------

def path_stream(seed: int, index: int) -> np.random.Generator:
    key = np.array([seed & _KEY_MASK, index & _KEY_MASK], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def brownian_increments(seed: int, n_paths: int, n_steps: int, n_dims: int,
                        dt: float) -> np.ndarray:
    out = np.empty((n_paths, n_steps, n_dims))
    for i in range(n_paths):
        out[i] = path_stream(seed, i).standard_normal((n_steps, n_dims))
    out *= np.sqrt(dt)
    return out


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

def _ellipticity_report(model: MarketModel, T: float) -> list:
    """Sample the smallest singular value of the full block sigma on a state box.

    Advisory: the uniform ellipticity requirement is a model hypothesis, not an
    algorithmic precondition, so violations only produce warnings.
    """
    warnings_found = []
    lo_mult, hi_mult = model.state_box[0]
    r_lo, r_hi = model.state_box[1]
    s_grid = np.linspace(lo_mult, hi_mult, 10)[:, None] * model.s0[None, :]
    if model.k > 0:
        r_grid = np.linspace(r_lo, r_hi, 10)[:, None] * np.ones(model.k)[None, :]
    else:
        r_grid = np.zeros((10, 0))
    for t in np.linspace(0.0, T, 5):
        for i in range(10):
            s = s_grid[i : i + 1]
            r = r_grid[i : i + 1]
            sig = model.full_sigma(t, s, r)[0]
            smin = np.linalg.svd(sig, compute_uv=False)[-1]
            if smin < model.ellipticity_floor:
                warnings_found.append(
                    f"ellipticity floor violated at t={t:.3f}, s={s[0]}, r={r[0]}: "
                    f"sigma_min={smin:.3e}"
                )
    return warnings_found


def simulate_paths(model: MarketModel, grid: TimeGrid, n_paths: int, seed: int) -> PathEnsemble:
    """Simulate the joint system: log-Euler for S, Euler for R.

    Identical (model, grid, n_paths, seed) reproduce bit-identical ensembles.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    meta = {"ellipticity_warnings": []}
    if model.check_ellipticity:
        meta["ellipticity_warnings"] = _ellipticity_report(model, grid.T)
        for w in meta["ellipticity_warnings"]:
            warnings.warn(w, RuntimeWarning, stacklevel=2)

    N, dt = grid.n_steps, grid.dt
    d, k, n = model.d, model.k, model.n
    dW = brownian_increments(seed, n_paths, N, n, dt)

    S = np.empty((n_paths, N + 1, d))
    R = np.empty((n_paths, N + 1, k))
    S[:, 0] = model.s0
    R[:, 0] = model.r0
    log_s = np.log(S[:, 0]).copy()
    knots = grid.knots
    for j in range(N):
        t = knots[j]
        s, r = S[:, j], R[:, j]
        mu, sl, b, dl, sp = model.coefficients(t, s, r)
        dWl = dW[:, j, :d]
        dWp = dW[:, j, d:]
        var = np.einsum("mij,mij->mi", sl, sl)  # row norms^2 of sigma_l
        log_s += (mu - 0.5 * var) * dt + np.einsum("mij,mj->mi", sl, dWl)
        S[:, j + 1] = np.exp(log_s)
        if k > 0:
            R[:, j + 1] = r + b * dt + np.einsum("mij,mj->mi", dl, dWl) \
                + np.einsum("mij,mj->mi", sp, dWp)
    return PathEnsemble(grid=grid, n_paths=n_paths, seed=seed, S=S, R=R, dW=dW,
                        model=model, metadata=meta)


# ---------------------------------------------------------------------------
# Semimartingale primitives
# ---------------------------------------------------------------------------

def market_price_of_risk(model: MarketModel, t: float, s, r=None):
    """theta solving sigma_l theta = mu, and lambda = diag(s)^-1 (sigma_l sigma_l')^-1 mu.

    Raises SingularVolatilityError with a conditioning report when sigma_l is
    numerically singular.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))[None, :]
    r = np.zeros((1, model.k)) if r is None else np.atleast_1d(np.asarray(r, dtype=float))[None, :]
    mu = model.mu(t, s, r)[0]
    sl = model.sigma_l(t, s, r)[0]
    cond = np.linalg.cond(sl)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularVolatilityError(
            f"sigma_l singular at t={t}, s={s[0]}, r={r[0]}: cond={cond:.3e}"
        )
    theta = np.linalg.solve(sl, mu)
    lam = np.linalg.solve(sl @ sl.T, mu) / s[0]
    return theta, lam


def theta_on_paths(model: MarketModel, ensemble: PathEnsemble,
                   include_terminal: bool = False) -> np.ndarray:
    """Market price of risk along each path: (n_paths, N[+1], d)."""
    N = ensemble.grid.n_steps
    knots = ensemble.grid.knots
    upto = N + 1 if include_terminal else N
    out = np.empty((ensemble.n_paths, upto, model.d))
    for j in range(upto):
        s, r = ensemble.S[:, j], ensemble.R[:, j]
        mu = model.mu(knots[j], s, r)
        sl = model.sigma_l(knots[j], s, r)
        out[:, j] = np.linalg.solve(sl, mu[..., None])[..., 0]
    return out


def lambda_state(model: MarketModel, t: float, s: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Batched diag(s)^-1 (sigma_l sigma_l')^-1 mu at a common time: (m, d)."""
    mu = model.mu(t, s, r)
    sl = model.sigma_l(t, s, r)
    gram = np.einsum("mij,mkj->mik", sl, sl)
    return np.linalg.solve(gram, mu[..., None])[..., 0] / s


def lambda_on_paths(model: MarketModel, ensemble: PathEnsemble) -> np.ndarray:
    """diag(s)^-1 (sigma_l sigma_l')^-1 mu along each path: (n_paths, N, d)."""
    N = ensemble.grid.n_steps
    knots = ensemble.grid.knots
    out = np.empty((ensemble.n_paths, N, model.d))
    for j in range(N):
        s, r = ensemble.S[:, j], ensemble.R[:, j]
        mu = model.mu(knots[j], s, r)
        sl = model.sigma_l(knots[j], s, r)
        gram = np.einsum("mij,mkj->mik", sl, sl)
        out[:, j] = np.linalg.solve(gram, mu[..., None])[..., 0] / s
    return out


def mean_variance_tradeoff(ensemble: PathEnsemble, model: MarketModel) -> np.ndarray:
    """K_t = int_0^t |theta_u|^2 du per path, left-rectangle quadrature.

    Returns (n_paths, N+1), nondecreasing along each path, K_0 = 0.
    """
    theta = theta_on_paths(model, ensemble)
    rate = np.sum(theta**2, axis=-1)  # (n_paths, N)
    K = np.zeros((ensemble.n_paths, ensemble.grid.n_steps + 1))
    np.cumsum(rate * ensemble.grid.dt, axis=1, out=K[:, 1:])
    return K


def stochastic_exponential(dN: np.ndarray, d_qv: np.ndarray) -> np.ndarray:
    """Doleans-Dade exponential of a continuous local martingale N.

    ``dN`` holds per-step increments of int a' dW and ``d_qv`` per-step
    increments of <N> = int |a|^2 dt.  Returns (n_paths, N+1) with E_0 = 1,
    strictly positive by construction: E_t = exp(N_t - <N>_t / 2).
    """
    log_e = np.zeros((dN.shape[0], dN.shape[1] + 1))
    np.cumsum(dN - 0.5 * d_qv, axis=1, out=log_e[:, 1:])
    return np.exp(log_e)


@dataclass
class WealthPaths:
    """Forward-Euler wealth integral against simulated price increments."""

    X: np.ndarray  # (n_paths, N+1)
    clip_events: int


def integrate_wealth(ensemble: PathEnsemble, rule: StrategyRule, x0: float) -> WealthPaths:
    """X_t = x0 + int_0^t pi_u dS_u (forward Euler against simulated increments).

    With clipping enabled on the rule, holdings are scaled per step so wealth
    never drops below the floor; the number of affected (path, step) cells is
    reported.
    """
    N = ensemble.grid.n_steps
    knots = ensemble.grid.knots
    X = np.empty((ensemble.n_paths, N + 1))
    X[:, 0] = x0
    clip_events = 0
    floor = rule.clip_floor
    for j in range(N):
        pi = rule.holdings(knots[j], X[:, j], ensemble.S[:, j], ensemble.R[:, j], step=j)
        if np.isnan(pi).any():
            bad = np.argwhere(np.isnan(pi))[0]
            raise StrategyEvaluationError(
                f"strategy produced NaN holdings at path {bad[0]}, step {j}"
            )
        gain = np.sum(pi * (ensemble.S[:, j + 1] - ensemble.S[:, j]), axis=-1)
        x_next = X[:, j] + gain
        if floor is not None:
            bad = x_next < floor
            if np.any(bad):
                clip_events += int(bad.sum())
                headroom = np.maximum(X[:, j][bad] - floor, 0.0)
                drop = X[:, j][bad] - x_next[bad]  # > 0 where clipped
                scale = np.where(drop > 0, headroom / drop, 0.0)
                x_next[bad] = X[:, j][bad] - scale * drop
        X[:, j + 1] = x_next
    return WealthPaths(X=X, clip_events=clip_events)


# ---------------------------------------------------------------------------
# Built-in model families
# ---------------------------------------------------------------------------

def black_scholes(mu: float, sigma: float, s0: float = 1.0) -> MarketModel:
    """Single asset, constant drift and volatility, no factor."""

    def mu_fn(t, s, r):
        return np.full((s.shape[0], 1), mu)

    def sl_fn(t, s, r):
        return np.full((s.shape[0], 1, 1), sigma)

    return MarketModel(d=1, n=1, mu=mu_fn, sigma_l=sl_fn, s0=np.array([s0]),
                       mpr_structure="deterministic", check_ellipticity=False)


def cev(mu: float, sigma: float, beta: float, s0: float = 1.0) -> MarketModel:
    """Single asset with local volatility sigma * s**beta."""

    def mu_fn(t, s, r):
        return np.full((s.shape[0], 1), mu)

    def sl_fn(t, s, r):
        return (sigma * s**beta)[:, :, None]

    return MarketModel(d=1, n=1, mu=mu_fn, sigma_l=sl_fn, s0=np.array([s0]),
                       mpr_structure="price_dependent", check_ellipticity=False)


def ou_factor(sigma: float, kappa: float, mean: float, sigma_perp: float,
              s0: float = 1.0, r0: float = 0.0,
              theta_of_r: Optional[Callable] = None) -> MarketModel:
    """Single asset with an independent Ornstein-Uhlenbeck factor driving the
    market price of risk: theta = theta_of_r(R) (identity by default), so the
    asset drift is mu = sigma * theta(R).
    """
    th = theta_of_r if theta_of_r is not None else (lambda r: r)

    def mu_fn(t, s, r):
        return sigma * th(r[:, :1])

    def sl_fn(t, s, r):
        return np.full((s.shape[0], 1, 1), sigma)

    def b_fn(t, s, r):
        return kappa * (mean - r)

    def sp_fn(t, s, r):
        return np.full((s.shape[0], 1, 1), sigma_perp)

    return MarketModel(d=1, n=2, mu=mu_fn, sigma_l=sl_fn, b=b_fn, sigma_perp=sp_fn,
                       s0=np.array([s0]), r0=np.array([r0]),
                       mpr_structure="factor_only", check_ellipticity=False)
