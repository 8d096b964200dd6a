"""Executable optimality principle and independent brute-force oracles.

The dynamic value composed with any admissible wealth path is a
supermartingale, and a martingale exactly along the optimal strategy.  Both
statements are checked statistically at finitely many test times with z-score
thresholds; the brute-force search over piecewise-constant proportions gives
an independent lower-bound oracle for the value itself.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from bellman_lab import market as mk
from bellman_lab._threads import max_workers
from bellman_lab.market import MarketModel, PathEnsemble, StrategyRule
from bellman_lab.utility import UtilitySpec, evaluate
from bellman_lab.valuation import ValueProcess, _knot_index, strategy_from_value


@dataclass
class TimeVerdict:
    t: float
    mean: float
    stderr: float
    verdict: str  # 'supermartingale_ok' | 'martingale_ok' | 'violation'
    z_score: float


@dataclass
class OptimalityReport:
    baseline: float  # V(0, x0)
    test_times: Sequence[float]
    verdicts: list
    clip_events: int
    boundedness_max: float  # max over paths/times of |V(t, X_t)|, class-D proxy
    passed: bool


def _ensure_floor(rule: StrategyRule, utility: UtilitySpec, x0: float) -> StrategyRule:
    if utility.positive_domain and rule.clip_floor is None:
        return replace(rule, clip_floor=1e-6 * x0)
    return rule


def supermartingale_test(value: ValueProcess, rule: StrategyRule,
                         ensemble: PathEnsemble, x0: float,
                         test_times: Sequence[float],
                         optimal: bool = False) -> OptimalityReport:
    """Check E[V(t, X^pi_t)] <= V(0, x0) (supermartingale) at each test time,
    or two-sided equality within 2 standard errors for the optimal rule.
    """
    utility = value.utility
    rule = _ensure_floor(rule, utility, x0)
    wealth = mk.integrate_wealth(ensemble, rule, x0)
    baseline = value.value0(x0, ensemble)
    verdicts = []
    bound = abs(baseline)
    ok = True
    for t in test_times:
        k = _knot_index(ensemble.grid, t)
        samples = value.value_samples(k, wealth.X[:, k], ensemble)
        mean = float(samples.mean())
        stderr = float(samples.std(ddof=1) / np.sqrt(len(samples)))
        bound = max(bound, float(np.abs(samples).max()))
        # deterministic samples carry only roundoff noise; compare at an
        # absolute floor instead of dividing by a vanishing stderr
        tol = max(2 * stderr, 1e-10 * max(1.0, abs(baseline)))
        z = (mean - baseline) / max(stderr, 0.5 * tol)
        if optimal:
            verdict = "martingale_ok" if abs(mean - baseline) <= tol else "violation"
        else:
            verdict = "supermartingale_ok" if mean <= baseline + tol else "violation"
        if verdict == "violation":
            ok = False
        verdicts.append(TimeVerdict(t=t, mean=mean, stderr=stderr,
                                    verdict=verdict, z_score=float(z)))
    return OptimalityReport(baseline=baseline, test_times=list(test_times),
                            verdicts=verdicts, clip_events=wealth.clip_events,
                            boundedness_max=bound, passed=ok)


# ---------------------------------------------------------------------------
# Brute force over piecewise-constant proportions
# ---------------------------------------------------------------------------

@dataclass
class BruteForceResult:
    proportions: np.ndarray
    rebalance_dates: Sequence[float]
    candidates: list  # proportion vectors, lexicographic order
    values: np.ndarray
    stderrs: np.ndarray
    argmax: tuple
    best_value: float
    best_stderr: float
    boundary_attained: bool


def _terminal_utility(utility: UtilitySpec, ensemble: PathEnsemble,
                      x_terminal: np.ndarray) -> np.ndarray:
    if utility.family == "exponential" and utility.claim is not None:
        h = np.asarray(utility.claim(ensemble.S[:, -1], ensemble.R[:, -1]), dtype=float)
        return -np.exp(-utility.gamma * (x_terminal - h))
    u, _, _ = evaluate(utility, x_terminal)
    return u


def _proportion_wealth(ensemble: PathEnsemble, frac_per_step: np.ndarray,
                       x0: float, floor: Optional[float]) -> np.ndarray:
    """Wealth under a per-step proportion schedule (N,) for a single asset,
    rebalanced at every grid knot."""
    rel = np.diff(ensemble.S[:, :, 0], axis=1) / ensemble.S[:, :-1, 0]
    x = np.full(ensemble.n_paths, float(x0))
    for j in range(rel.shape[1]):
        step = 1.0 + frac_per_step[j] * rel[:, j]
        if floor is not None:
            step = np.maximum(step, floor / np.maximum(x, floor))
        x = x * step
    return x


def brute_force_value(model: MarketModel, utility: UtilitySpec,
                      proportions, rebalance_dates: Sequence[float],
                      ensemble: PathEnsemble, x0: float = 1.0,
                      max_candidates: int = 20000) -> BruteForceResult:
    """Monte Carlo search over piecewise-constant-proportion strategies.

    Candidates are all proportion assignments per rebalance segment; the best
    expected terminal utility and its argmax are returned, ties broken toward
    the lexicographically smallest proportion vector.  All candidates share
    the ensemble (common random numbers).
    """
    proportions = np.sort(np.atleast_1d(np.asarray(proportions, dtype=float)))
    dates = sorted(rebalance_dates)
    if not dates or dates[0] != 0.0:
        dates = [0.0] + list(dates)
    knots = ensemble.grid.knots[:-1]
    seg_index = np.searchsorted(dates, knots + 1e-12) - 1
    n_seg = len(dates)
    if len(proportions) ** n_seg > max_candidates:
        raise ValueError(
            f"{len(proportions)}^{n_seg} candidates exceed the cap {max_candidates}")
    floor = 1e-6 * x0 if utility.positive_domain else None
    candidates = list(itertools.product(proportions, repeat=n_seg))

    def evaluate_candidate(cand):
        frac = np.asarray(cand)[seg_index]
        x_T = _proportion_wealth(ensemble, frac, x0, floor)
        u = _terminal_utility(utility, ensemble, x_T)
        return float(u.mean()), float(u.std(ddof=1) / np.sqrt(len(u)))

    with ThreadPoolExecutor(max_workers=max_workers()) as pool:
        results = list(pool.map(evaluate_candidate, candidates))
    values = np.array([v for v, _ in results])
    stderrs = np.array([s for _, s in results])
    if not np.any(np.isfinite(values)):
        raise ValueError("all candidate strategies produced non-finite utility")
    best = 0
    for i in range(1, len(candidates)):
        if values[i] > values[best]:
            best = i
    arg = candidates[best]
    boundary = any(p in (proportions[0], proportions[-1]) for p in arg)
    return BruteForceResult(proportions=proportions, rebalance_dates=dates,
                            candidates=candidates, values=values, stderrs=stderrs,
                            argmax=arg, best_value=float(values[best]),
                            best_stderr=float(stderrs[best]),
                            boundary_attained=boundary)


# ---------------------------------------------------------------------------
# Forward SDE cross-check
# ---------------------------------------------------------------------------

@dataclass
class CrossCheckReport:
    expected_utility: float
    stderr: float
    value0: float
    tolerance: float
    clip_events: int
    passed: bool


def forward_sde_crosscheck(value: ValueProcess, model: MarketModel,
                           ensemble: PathEnsemble, x0: float,
                           rel_allowance: float = 0.01) -> CrossCheckReport:
    """Integrate the optimal wealth via the feedback rule extracted from the
    value representation and compare E[U(X*_T)] with V(0, x0).

    Passes iff the gap is within 2 standard errors plus a discretization
    allowance.  For utilities on R+ any clipping of the optimal wealth is a
    failure: the optimal wealth must stay positive on its own.
    """
    rule = strategy_from_value(value, model)
    rule = _ensure_floor(rule, value.utility, x0)
    wealth = mk.integrate_wealth(ensemble, rule, x0)
    u = _terminal_utility(value.utility, ensemble, wealth.X[:, -1])
    mean = float(u.mean())
    stderr = float(u.std(ddof=1) / np.sqrt(len(u)))
    v0 = value.value0(x0, ensemble)
    tol = 2 * stderr + rel_allowance * abs(v0)
    passed = abs(mean - v0) <= tol
    if value.utility.positive_domain and wealth.clip_events > 0:
        passed = False
    return CrossCheckReport(expected_utility=mean, stderr=stderr, value0=v0,
                            tolerance=tol, clip_events=wealth.clip_events,
                            passed=passed)


# ---------------------------------------------------------------------------
# Driver argmax check
# ---------------------------------------------------------------------------

@dataclass
class ArgmaxReport:
    analytic_maximizer: float
    analytic_maximum: float
    grid_maximizer: float
    identity_rel_error: float
    passed: bool


def driver_argmax_check(V_x: float, V_xx: float, phi_x: float, lam: float,
                        nu: float, p_grid) -> ArgmaxReport:
    """Grid-maximize G(p) = V_x p nu lam + p nu phi_x + V_xx p^2 nu / 2 and
    confirm the analytic maximizer -(V_x lam + phi_x)/V_xx wins, with maximum
    value (V_x lam + phi_x)^2 nu / (-2 V_xx).
    """
    if V_xx >= 0:
        raise ValueError("concavity violated: need V_xx < 0")
    p_grid = np.asarray(p_grid, dtype=float)

    def G(p):
        return V_x * p * nu * lam + p * nu * phi_x + 0.5 * V_xx * p**2 * nu

    p_star = -(V_x * lam + phi_x) / V_xx
    g_star = (V_x * lam + phi_x) ** 2 * nu / (-2.0 * V_xx)
    g_grid = G(p_grid)
    i_best = int(np.argmax(g_grid))
    step = np.max(np.diff(p_grid)) if len(p_grid) > 1 else np.inf
    within_step = abs(p_grid[i_best] - p_star) <= step + 1e-12
    beats_grid = G(p_star) >= g_grid.max() - 1e-12 * max(1.0, abs(g_star))
    rel = abs(G(p_star) - g_star) / max(abs(g_star), 1e-300)
    passed = bool(within_step and beats_grid and rel <= 1e-8)
    return ArgmaxReport(analytic_maximizer=float(p_star), analytic_maximum=float(g_star),
                        grid_maximizer=float(p_grid[i_best]),
                        identity_rel_error=float(rel), passed=passed)
