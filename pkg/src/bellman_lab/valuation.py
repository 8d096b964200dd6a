"""Closed-form value processes and optimal strategies for the four utilities.

Each family factorizes the value function through a scalar process V_t:

    power        x^p * V_t                       V_T = 1
    logarithmic  log x + V_t                     V_T = 0   (additive)
    exponential  -exp(-gamma x) * V_t            V_T = exp(gamma H)
    quadratic    b^2 - (x - b)^2 * V_t           V_T = 1

The two explicit construction Cases are implemented: Case 1 ("almost
complete": the price filtration carries the market price of risk, solved
through the linear price PDE) and Case 2 (market price of risk independent of
the price filtration, solved by direct conditional expectations of the
mean-variance tradeoff).  Conditional expectations at interior times use
least-squares regression on a polynomial basis of the Markov state.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from bellman_lab import market as mk
from bellman_lab.bsde import BSDESolution, fit_conditional, markov_states
from bellman_lab.market import MarketModel, PathEnsemble, StrategyRule, feedback_rule
from bellman_lab.pde import GridFunction
from bellman_lab.utility import UtilityDomainError, UtilitySpec


class ValueRepresentationError(RuntimeError):
    """Value factor left its admissible range (e.g. lost positivity)."""


@dataclass
class CaseCertificate:
    """Records which explicit Case was used and its measured applicability defect."""

    case_id: str  # 'case1_minimal_measure' | 'case2_orthogonal'
    residual: float
    applicable: bool
    note: str = ""


@dataclass
class ValueProcess:
    """Scalar value factor with an optional state-function representation.

    ``factor`` holds per-path samples aligned with the ensemble used to build
    the process; ``factor_fn`` (when available) evaluates the factor at
    arbitrary (t, s, r); ``phi_over_factor`` is the GKW-integrand ratio
    phi_t / V_t as a state feedback (None means identically zero).
    """

    utility: UtilitySpec
    times: np.ndarray
    kind: str  # 'path_samples' | 'grid_function' | 'closed_form'
    factor: Optional[np.ndarray] = None  # (n_paths, n_times)
    factor_fn: Optional[Callable] = None  # (t, s, r) -> (m,)
    phi_over_factor: Optional[Callable] = None  # (t, s, r) -> (m, d)
    certificate: Optional[CaseCertificate] = None

    def factor_at(self, knot: int, ensemble: Optional[PathEnsemble] = None) -> np.ndarray:
        if self.factor is not None:
            return self.factor[:, knot]
        if self.factor_fn is None:
            raise ValueRepresentationError("no factor representation available")
        if ensemble is None:
            raise ValueRepresentationError("factor_fn evaluation needs an ensemble")
        t = self.times[knot]
        return np.asarray(self.factor_fn(t, ensemble.S[:, knot], ensemble.R[:, knot]))

    def value_samples(self, knot: int, x, ensemble: Optional[PathEnsemble] = None):
        return compose_value(self.utility, x, self.factor_at(knot, ensemble))

    def value0(self, x0: float, ensemble: Optional[PathEnsemble] = None) -> float:
        return float(np.mean(self.value_samples(0, x0, ensemble)))

    def factor0(self, ensemble: Optional[PathEnsemble] = None) -> float:
        return float(np.mean(self.factor_at(0, ensemble)))


def compose_value(utility: UtilitySpec, x, factor):
    """Assemble the full value from wealth and the scalar factor."""
    x = np.asarray(x, dtype=float)
    if utility.family == "power":
        if np.any(x <= 0):
            raise UtilityDomainError("power value undefined at x <= 0")
        return x**utility.p * factor
    if utility.family == "log":
        if np.any(x <= 0):
            raise UtilityDomainError("log value undefined at x <= 0")
        return np.log(x) + factor
    if utility.family == "exponential":
        return -np.exp(-utility.gamma * x) * factor
    return utility.b**2 - (x - utility.b) ** 2 * factor


def _conditional_at_knots(samples_fn, ensemble: PathEnsemble, degree: int) -> np.ndarray:
    """Per-knot regression estimate of E[samples_fn(k) | state_k].

    At the initial knot all paths share one state, so the plain mean is used.
    """
    N = ensemble.grid.n_steps
    out = np.empty((ensemble.n_paths, N + 1))
    for k in range(N + 1):
        y = samples_fn(k)
        if k == 0:
            out[:, 0] = y.mean()
        elif k == N:
            out[:, N] = y
        else:
            out[:, k] = fit_conditional(y, markov_states(ensemble, k), degree)
    return out


def _price_filtration_residual(w: np.ndarray, ensemble: PathEnsemble, degree: int) -> float:
    """Fraction of the variance of w explained by the terminal price state.

    Used as the measured defect of the Case-2 orthogonality hypothesis: under
    that hypothesis the exponential tradeoff functional is uncorrelated with
    the price filtration.
    """
    total = w.var()
    if total < 1e-24:
        return 0.0
    states = np.log(ensemble.S[:, -1])
    fitted = fit_conditional(w, states, degree)
    return float(fitted.var() / total)


# ---------------------------------------------------------------------------
# Logarithmic utility
# ---------------------------------------------------------------------------

@dataclass
class LogValueResult:
    value: float
    process: ValueProcess
    rule: StrategyRule
    optimal_wealth: Optional[np.ndarray] = None  # x * E(lambda . S) per path


def log_optimal_rule(model: MarketModel) -> StrategyRule:
    """pi*_t = lambda_t X_t, the myopic log-optimal feedback."""

    def fb(t, x, s, r):
        return mk.lambda_state(model, t, s, r) * x[:, None]

    return feedback_rule(fb)


def log_value(model: MarketModel, source, t: float, x: float,
              degree: int = 3) -> LogValueResult:
    """Value log x + E[int_t^T |theta|^2/2 du | F_t] and the optimal strategy.

    ``source`` is either a PathEnsemble (Monte Carlo / regression route) or a
    GridFunction from the log-utility linear PDE.
    """
    if x <= 0:
        raise UtilityDomainError("log utility needs x > 0")
    rule = log_optimal_rule(model)
    if isinstance(source, GridFunction):
        y0 = model.r0[0] if source.coord == "r" else float(np.log(model.s0[0]))
        remaining = float(source(t, y0))
        times = source.times
        fn = _grid_factor_fn(source)
        proc = ValueProcess(utility=UtilitySpec("log"), times=times,
                            kind="grid_function", factor_fn=fn)
        return LogValueResult(value=np.log(x) + remaining, process=proc, rule=rule)
    ens = source
    K = mk.mean_variance_tradeoff(ens, model)
    factor = _conditional_at_knots(lambda k: 0.5 * (K[:, -1] - K[:, k]), ens, degree)
    proc = ValueProcess(utility=UtilitySpec("log"), times=ens.grid.knots,
                        kind="path_samples", factor=factor)
    knot = _knot_index(ens.grid, t)
    value = float(np.log(x) + factor[:, knot].mean())
    lam = mk.lambda_on_paths(model, ens)
    dS = np.diff(ens.S, axis=1)
    dN = np.einsum("mkd,mkd->mk", lam, dS)
    theta = mk.theta_on_paths(model, ens)
    d_qv = np.sum(theta**2, axis=-1) * ens.grid.dt
    wealth = x * mk.stochastic_exponential(dN, d_qv)
    return LogValueResult(value=value, process=proc, rule=rule, optimal_wealth=wealth)


def _knot_index(grid, t: float) -> int:
    idx = int(round(t / grid.dt))
    if abs(idx * grid.dt - t) > 1e-9 * max(1.0, grid.T):
        raise ValueError(f"t={t} is not a grid knot")
    return min(max(idx, 0), grid.n_steps)


def _grid_factor_fn(gf: GridFunction) -> Callable:
    def fn(t, s, r):
        y = r[:, 0] if gf.coord == "r" else np.log(s[:, 0])
        return np.asarray(gf(t, y))

    return fn


# ---------------------------------------------------------------------------
# Power utility
# ---------------------------------------------------------------------------

def power_value_case2(model: MarketModel, ensemble: PathEnsemble,
                      utility: UtilitySpec, degree: int = 3) -> ValueProcess:
    """Case 2: V_t = E[exp(-(q/2)(K_T - K_t)) | F_t], integrand phi = 0.

    Applicable when the market price of risk is independent of the price
    filtration (or deterministic); otherwise a warning is attached together
    with the measured orthogonality defect.
    """
    q = utility.q
    K = mk.mean_variance_tradeoff(ensemble, model)
    w = np.exp(-0.5 * q * (K[:, -1] - K[:, 0]))
    residual = _price_filtration_residual(w, ensemble, degree)
    applicable = model.mpr_structure in ("deterministic", "factor_only")
    cert = CaseCertificate(case_id="case2_orthogonal", residual=residual,
                           applicable=applicable)
    if not applicable:
        cert.note = "market price of risk not flagged as price-independent"
        warnings.warn(f"Case 2 applicability not flagged; measured price-filtration "
                      f"variance fraction {residual:.3e}", RuntimeWarning, stacklevel=2)
    factor = _conditional_at_knots(
        lambda k: np.exp(-0.5 * q * (K[:, -1] - K[:, k])), ensemble, degree)
    return ValueProcess(utility=utility, times=ensemble.grid.knots,
                        kind="path_samples", factor=factor, certificate=cert)


def power_value_case1(model: MarketModel, pde_solution: GridFunction,
                      utility: UtilitySpec,
                      ensemble: Optional[PathEnsemble] = None) -> ValueProcess:
    """Case 1: V_t = vtilde(t, s)^{1/(1-q)} from the linear price PDE, with the
    GKW integrand recovered from the spatial derivative by the chain rule:
    phi / V = vtilde_s / ((q - 1) vtilde).
    """
    q = utility.q
    if pde_solution.values.min() <= 0:
        raise ValueRepresentationError(
            "price PDE solution must be strictly positive for the fractional power")
    exponent = 1.0 / (1.0 - q)
    dv = pde_solution.space_derivative()
    in_log = pde_solution.coord == "log_s"

    def factor_fn(t, s, r):
        y = np.log(s[:, 0]) if in_log else s[:, 0]
        return np.asarray(pde_solution(t, y)) ** exponent

    def phi_over_factor(t, s, r):
        y = np.log(s[:, 0]) if in_log else s[:, 0]
        v = np.asarray(pde_solution(t, y))
        v_y = np.asarray(dv(t, y))
        v_s = v_y / s[:, 0] if in_log else v_y
        return (v_s / ((q - 1.0) * v))[:, None]

    factor = None
    times = pde_solution.times
    if ensemble is not None:
        times = ensemble.grid.knots
        factor = np.column_stack([
            factor_fn(times[k], ensemble.S[:, k], ensemble.R[:, k])
            for k in range(len(times))
        ])
    cert = CaseCertificate(case_id="case1_minimal_measure", residual=0.0,
                           applicable=model.mpr_structure != "factor_only",
                           note="representation defect not measured; PDE route")
    return ValueProcess(utility=utility, times=times, kind="grid_function",
                        factor=factor, factor_fn=factor_fn,
                        phi_over_factor=phi_over_factor, certificate=cert)


# ---------------------------------------------------------------------------
# Exponential utility
# ---------------------------------------------------------------------------

def _claim_samples(utility: UtilitySpec, ensemble: PathEnsemble) -> np.ndarray:
    if utility.claim is None:
        return np.zeros(ensemble.n_paths)
    h = np.asarray(utility.claim(ensemble.S[:, -1], ensemble.R[:, -1]), dtype=float)
    return h


def _probe_claim_bound(utility: UtilitySpec, model: MarketModel) -> None:
    if utility.claim is None:
        return
    lo_mult, hi_mult = model.state_box[0]
    r_lo, r_hi = model.state_box[1]
    s = np.linspace(lo_mult, hi_mult, 25)[:, None] * model.s0[None, :]
    r = (np.linspace(r_lo, r_hi, 25)[:, None] * np.ones(max(model.k, 1))[None, :])[:, : model.k]
    g = np.asarray(utility.claim(s, r), dtype=float)
    if np.max(np.abs(g)) > utility.claim_bound:
        raise ValueError(
            f"claim exceeds the declared bound {utility.claim_bound} on the state box "
            f"(max |g| = {np.max(np.abs(g)):.3e})"
        )


def _minimal_measure_model(model: MarketModel) -> MarketModel:
    """Drift-adjusted coefficients under the minimal martingale measure:
    asset drift removed, factor drift reduced by delta * theta."""

    def mu_min(t, s, r):
        return np.zeros((s.shape[0], model.d))

    if model.k > 0 and model.delta is not None:
        base_b = model.b
        base_delta = model.delta

        def b_min(t, s, r):
            mu = model.mu(t, s, r)
            sl = model.sigma_l(t, s, r)
            theta = np.linalg.solve(sl, mu[..., None])[..., 0]
            return base_b(t, s, r) - np.einsum("mij,mj->mi", base_delta(t, s, r), theta)

        return replace(model, mu=mu_min, b=b_min)
    return replace(model, mu=mu_min)


def exponential_value(model: MarketModel, ensemble: PathEnsemble,
                      utility: UtilitySpec, case: str = "case2",
                      degree: int = 3) -> ValueProcess:
    """Exponential-utility value factor V_t with terminal exp(gamma H).

    Case 2 (price-independent market price of risk and claim):
        V_t = E[exp(gamma H - (K_T - K_t)/2) | F_t],  phi = 0.
    Case 1 (almost complete, claim attainable):
        V_t = exp(E^{Qmin}[gamma H - (K_T - K_t)/2 | F_t]), with the
        conditional expectation taken under the minimal martingale measure by
        re-simulating the drift-adjusted system; phi = V h with h available
        analytically only in the deterministic case (h = 0).
    """
    _probe_claim_bound(utility, model)
    gamma = utility.gamma
    h_claim = _claim_samples(utility, ensemble)
    if case == "case2":
        K = mk.mean_variance_tradeoff(ensemble, model)
        w_fn = lambda k: np.exp(gamma * h_claim - 0.5 * (K[:, -1] - K[:, k]))
        residual = _price_filtration_residual(w_fn(0), ensemble, degree)
        applicable = model.mpr_structure in ("deterministic", "factor_only")
        cert = CaseCertificate(case_id="case2_orthogonal", residual=residual,
                               applicable=applicable)
        if not applicable:
            warnings.warn("exponential Case 2 applicability not flagged",
                          RuntimeWarning, stacklevel=2)
        factor = _conditional_at_knots(w_fn, ensemble, degree)
        return ValueProcess(utility=utility, times=ensemble.grid.knots,
                            kind="path_samples", factor=factor, certificate=cert)
    if case != "case1":
        raise ValueError("case must be 'case1' or 'case2'")
    qmin = _minimal_measure_model(model)
    ens_min = mk.simulate_paths(qmin, ensemble.grid, ensemble.n_paths, ensemble.seed)
    K_min = mk.mean_variance_tradeoff(ens_min, model)
    h_min = _claim_samples(utility, ens_min)
    N = ensemble.grid.n_steps
    factor = np.empty((ensemble.n_paths, N + 1))
    for k in range(N + 1):
        expo = gamma * h_min - 0.5 * (K_min[:, -1] - K_min[:, k])
        if k == 0:
            factor[:, 0] = np.exp(expo.mean())
        elif k == N:
            factor[:, N] = np.exp(gamma * h_claim)
        else:
            basis_states = markov_states(ens_min, k)
            coef, *_ = np.linalg.lstsq(
                _safe_basis(basis_states, degree), expo, rcond=None)
            eval_states = markov_states(ensemble, k)
            factor[:, k] = np.exp(_safe_basis(eval_states, degree) @ coef)
    cert = CaseCertificate(case_id="case1_minimal_measure", residual=0.0,
                           applicable=model.mpr_structure == "deterministic",
                           note="phi = V h with h = 0 (deterministic tradeoff)")
    return ValueProcess(utility=utility, times=ensemble.grid.knots,
                        kind="path_samples", factor=factor, certificate=cert)


def _safe_basis(states: np.ndarray, degree: int) -> np.ndarray:
    from bellman_lab.bsde import polynomial_basis
    return polynomial_basis(states, degree)


# ---------------------------------------------------------------------------
# Quadratic utility
# ---------------------------------------------------------------------------

def quadratic_value(model: MarketModel, source, utility: UtilitySpec,
                    degree: int = 3, tol: float = 1e-6) -> ValueProcess:
    """Value b^2 - (x - b)^2 V_t; V from the BSDE solver or, for a
    price-independent tradeoff, V_t = E[exp(-(K_T - K_t)) | F_t].

    Theory gives 0 < V <= 1 (the zero strategy is admissible); excursions
    beyond (0, 1] are reported as warnings.
    """
    if isinstance(source, BSDESolution):
        factor = source.V
        times = source.times
    else:
        ens = source
        K = mk.mean_variance_tradeoff(ens, model)
        factor = _conditional_at_knots(
            lambda k: np.exp(-(K[:, -1] - K[:, k])), ens, degree)
        times = ens.grid.knots
    if factor.min() <= 0 or factor.max() > 1.0 + tol:
        warnings.warn(
            f"quadratic value factor outside (0, 1]: range "
            f"[{factor.min():.3e}, {factor.max():.3e}]", RuntimeWarning, stacklevel=2)
    return ValueProcess(utility=utility, times=times, kind="path_samples",
                        factor=factor)


# ---------------------------------------------------------------------------
# Strategy extraction
# ---------------------------------------------------------------------------

def strategy_from_value(value: ValueProcess, model: MarketModel) -> StrategyRule:
    """Feedback strategy from the factorized value representation.

    Per-family reductions of the generic maximizer -(phi_x + lambda V_x)/V_xx:

        power        pi* = (1 - q)(phi/V + lambda) x
        logarithmic  pi* = lambda x
        exponential  pi* = (phi/V + lambda) / gamma
        quadratic    pi* = -(x - b)(phi/V + lambda)
    """
    fam = value.utility.family
    if fam != "log" and value.factor is not None and value.factor.min() <= 0:
        raise ValueRepresentationError(
            "value factor not strictly positive; strict concavity in x fails")
    phi_v = value.phi_over_factor

    def ratio(t, s, r):
        lam = mk.lambda_state(model, t, s, r)
        if phi_v is not None:
            lam = lam + np.asarray(phi_v(t, s, r))
        return lam

    if fam == "log":
        return log_optimal_rule(model)
    if fam == "power":
        scale = 1.0 - value.utility.q

        def fb_power(t, x, s, r):
            return scale * ratio(t, s, r) * x[:, None]

        return feedback_rule(fb_power)
    if fam == "exponential":
        gamma = value.utility.gamma

        def fb_exp(t, x, s, r):
            return ratio(t, s, r) / gamma

        return feedback_rule(fb_exp)
    b = value.utility.b

    def fb_quad(t, x, s, r):
        return -(x - b)[:, None] * ratio(t, s, r)

    return feedback_rule(fb_quad)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def export_value_curve(value: ValueProcess, path, strategy_stats: Optional[dict] = None):
    """Write (t, mean V, stderr) rows, optionally with strategy diagnostics."""
    factor = value.factor
    if factor is None:
        raise ValueRepresentationError("no factor samples to export")
    mean = factor.mean(axis=0)
    stderr = factor.std(axis=0, ddof=1) / np.sqrt(factor.shape[0])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["t", "mean_value_factor", "stderr"]
        extra = sorted(strategy_stats) if strategy_stats else []
        writer.writerow(header + extra)
        for i, t in enumerate(value.times):
            row = [f"{t:.10g}", f"{mean[i]:.12g}", f"{stderr[i]:.6g}"]
            row += [f"{strategy_stats[k]:.12g}" for k in extra]
            writer.writerow(row)
