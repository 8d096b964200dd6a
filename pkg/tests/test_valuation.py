import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bellman_lab import bsde as bs
from bellman_lab import market as mk
from bellman_lab import pde
from bellman_lab import utility as ut
from bellman_lab import valuation as vl

POWER_ORACLE = np.exp(0.125)
EXP_ORACLE = np.exp(-0.125)
QUAD_ORACLE = np.exp(-0.25)


def test_log_value_constant_theta(bs_model, bs_ensemble):
    res = vl.log_value(bs_model, bs_ensemble, 0.0, 1.0)
    assert res.value == pytest.approx(0.125, abs=1e-12)
    res2 = vl.log_value(bs_model, bs_ensemble, 0.0, 2.0)
    assert res2.value == pytest.approx(np.log(2.0) + 0.125, abs=1e-12)
    with pytest.raises(ut.UtilityDomainError):
        vl.log_value(bs_model, bs_ensemble, 0.0, -1.0)


def test_log_optimal_wealth_is_exponential(bs_model, bs_ensemble_small):
    res = vl.log_value(bs_model, bs_ensemble_small, 0.0, 1.0)
    w = res.optimal_wealth
    assert np.all(w > 0)
    assert np.allclose(w[:, 0], 1.0)
    # E[log X*_T] at the full horizon equals the attained value
    stderr = np.log(w[:, -1]).std(ddof=1) / np.sqrt(w.shape[0])
    assert abs(np.log(w[:, -1]).mean() - 0.125) <= 3 * stderr + 1e-3


def test_log_value_from_pde_grid(bs_model, ou_model, ou_ensemble):
    spec = pde.log_linear_factor_spec(kappa=1.0, mean=0.3, sigma_perp=0.3,
                                      theta=lambda r: r, r0=0.3, T=1.0)
    grid_fn = pde.solve_linear(spec)
    res = vl.log_value(ou_model, grid_fn, 0.0, 1.0)
    mc = vl.log_value(ou_model, ou_ensemble, 0.0, 1.0)
    assert res.value == pytest.approx(mc.value, abs=5e-3)


def test_power_case2_oracle(bs_model, bs_ensemble):
    spec = ut.power(0.5)
    vp = vl.power_value_case2(bs_model, bs_ensemble, spec)
    assert vp.factor0() == pytest.approx(POWER_ORACLE, rel=1e-10)
    assert np.allclose(vp.factor[:, -1], 1.0)  # terminal exactness
    assert vp.certificate.applicable


def test_power_case2_warns_when_price_dependent(bs_ensemble_small):
    model = mk.cev(mu=0.1, sigma=0.2, beta=0.5, s0=1.0)
    ens = mk.simulate_paths(model, mk.TimeGrid(T=1.0, n_steps=50), 2000, 3)
    with pytest.warns(RuntimeWarning):
        vp = vl.power_value_case2(model, ens, ut.power(0.5))
    assert not vp.certificate.applicable
    assert vp.certificate.residual >= 0


def test_power_case1_route(bs_model, bs_ensemble):
    spec = ut.power(0.5)
    g = pde.almost_complete_power_spec(sigma=0.2, theta=0.5, q=spec.q,
                                       s0=1.0, T=1.0)
    vp = vl.power_value_case1(bs_model, pde.solve_linear(g), spec,
                              ensemble=bs_ensemble)
    assert vp.factor0(bs_ensemble) == pytest.approx(POWER_ORACLE, rel=1e-5)
    # Merton proportion mu / ((1-p) sigma^2) = 5 from the extracted feedback
    rule = vl.strategy_from_value(vp, bs_model)
    h = rule.holdings(0.0, np.array([1.0]), np.array([[1.0]]), np.zeros((1, 0)))
    assert h[0, 0] == pytest.approx(5.0, rel=1e-6)


def test_exponential_case2_and_case1(bs_model, bs_ensemble):
    spec = ut.exponential(1.0)
    v2 = vl.exponential_value(bs_model, bs_ensemble, spec, case="case2")
    assert v2.factor0() == pytest.approx(EXP_ORACLE, rel=1e-10)
    v1 = vl.exponential_value(bs_model, bs_ensemble, spec, case="case1")
    assert v1.factor0() == pytest.approx(EXP_ORACLE, rel=1e-10)
    with pytest.raises(ValueError):
        vl.exponential_value(bs_model, bs_ensemble, spec, case="case3")


def test_exponential_invested_amount_wealth_independent(bs_model, bs_ensemble):
    spec = ut.exponential(1.0)
    v = vl.exponential_value(bs_model, bs_ensemble, spec)
    rule = vl.strategy_from_value(v, bs_model)
    s = np.array([[1.0]])
    r = np.zeros((1, 0))
    amounts = [rule.holdings(0.0, np.array([x0]), s, r)[0, 0] for x0 in (0.5, 1.0, 2.0)]
    # invested amount mu / (gamma sigma^2) = 2.5 at s = 1 regardless of wealth
    assert np.allclose(amounts, 2.5, rtol=1e-10)


def test_exponential_claim_bound_enforced(bs_model, bs_ensemble_small):
    wild = ut.exponential(1.0, claim=lambda s, r: 1e6 * s[:, 0], claim_bound=10.0)
    with pytest.raises(ValueError, match="bound"):
        vl.exponential_value(bs_model, bs_ensemble_small, wild)


def test_quadratic_value_and_strategy(bs_model, bs_ensemble):
    spec = ut.quadratic(1.0)
    v = vl.quadratic_value(bs_model, bs_ensemble, spec)
    assert v.factor0() == pytest.approx(QUAD_ORACLE, rel=1e-10)
    assert np.all(v.factor > 0)
    assert np.all(v.factor <= 1.0 + 1e-9)
    rule = vl.strategy_from_value(v, bs_model)
    # at the bliss point x = b the optimal position is zero
    h = rule.holdings(0.0, np.array([1.0]), np.array([[1.0]]), np.zeros((1, 0)))
    assert h[0, 0] == pytest.approx(0.0, abs=1e-12)
    # bliss-point start: value is exactly b^2
    assert v.value_samples(0, np.array([1.0]))[0] == pytest.approx(1.0)


def test_quadratic_from_bsde_solution(bs_model, bs_ensemble):
    prob = bs.BSDEProblem(driver_kind="quadratic",
                          terminal=np.ones(bs_ensemble.n_paths),
                          model=bs_model, ensemble=bs_ensemble, q=None)
    sol = bs.solve(prob)
    v = vl.quadratic_value(bs_model, sol, ut.quadratic(1.0))
    assert v.factor0() == pytest.approx(QUAD_ORACLE, rel=0.01)


@given(x=st.floats(min_value=0.2, max_value=5.0))
@settings(max_examples=25, deadline=None)
def test_factorization_separates_wealth(x):
    # the factor never depends on wealth: V(t, x) recomposes exactly
    factor = np.array([1.3])
    for spec in (ut.power(0.5), ut.logarithmic()):
        v = vl.compose_value(spec, np.array([x]), factor)
        if spec.family == "power":
            assert v[0] == pytest.approx(x**0.5 * 1.3)
        else:
            assert v[0] == pytest.approx(np.log(x) + 1.3)
    v = vl.compose_value(ut.exponential(2.0), np.array([x]), factor)
    assert v[0] == pytest.approx(-np.exp(-2.0 * x) * 1.3)
    v = vl.compose_value(ut.quadratic(1.0), np.array([x]), factor)
    assert v[0] == pytest.approx(1.0 - (x - 1.0) ** 2 * 1.3)


def test_strategy_requires_positive_factor(bs_model, bs_ensemble_small):
    v = vl.ValueProcess(utility=ut.power(0.5), times=bs_ensemble_small.grid.knots,
                        kind="path_samples",
                        factor=np.full((bs_ensemble_small.n_paths,
                                        bs_ensemble_small.grid.n_steps + 1), -1.0))
    with pytest.raises(vl.ValueRepresentationError):
        vl.strategy_from_value(v, bs_model)


def test_export_value_curve(tmp_path, bs_model, bs_ensemble_small):
    v = vl.power_value_case2(bs_model, bs_ensemble_small, ut.power(0.5))
    out = tmp_path / "curve.csv"
    vl.export_value_curve(v, out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "t,mean_value_factor,stderr"
    assert len(lines) == bs_ensemble_small.grid.n_steps + 2
