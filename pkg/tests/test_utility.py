import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bellman_lab import utility as ut


def test_power_values_and_derivatives():
    spec = ut.power(0.5)
    u, du, d2 = ut.evaluate(spec, np.array([1.0, 4.0]))
    assert np.allclose(u, [1.0, 2.0])
    assert np.allclose(du, [0.5, 0.25])
    assert np.all(d2 < 0)


def test_log_and_exponential_and_quadratic():
    u, du, d2 = ut.evaluate(ut.logarithmic(), np.array([1.0, np.e]))
    assert np.allclose(u, [0.0, 1.0])
    assert np.allclose(du, [1.0, 1.0 / np.e])
    u, du, d2 = ut.evaluate(ut.exponential(2.0), np.array([0.0]))
    assert u[0] == pytest.approx(-1.0)
    assert du[0] == pytest.approx(2.0)
    assert d2[0] == pytest.approx(-4.0)
    u, du, d2 = ut.evaluate(ut.quadratic(1.0), np.array([1.0]))
    assert u[0] == pytest.approx(1.0)  # maximum value b^2 at the bliss point
    assert du[0] == pytest.approx(0.0)
    assert d2[0] == pytest.approx(-2.0)


def test_domain_errors():
    with pytest.raises(ut.UtilityDomainError):
        ut.evaluate(ut.power(0.5), np.array([-1.0]))
    with pytest.raises(ut.UtilityDomainError):
        ut.evaluate(ut.logarithmic(), np.array([0.0]))
    # exponential and quadratic accept the whole line
    ut.evaluate(ut.exponential(1.0), np.array([-5.0]))
    ut.evaluate(ut.quadratic(1.0), np.array([-5.0]))


def test_parameter_validation():
    for p in (0.0, 1.0, 1.5, -0.2):
        with pytest.raises(ValueError):
            ut.power(p)
    with pytest.raises(ValueError):
        ut.exponential(-1.0)
    with pytest.raises(ValueError):
        ut.quadratic(0.0)


def test_conjugate_exponent():
    assert ut.power(0.5).q == pytest.approx(-1.0)
    assert ut.power(2.0 / 3.0).q == pytest.approx(-2.0)
    with pytest.raises(ValueError):
        ut.logarithmic().q


def test_asymptotic_elasticity():
    ae = ut.asymptotic_elasticity(ut.power(0.3))
    assert ae.applicable and ae.satisfied
    assert ae.numeric == pytest.approx(0.3, rel=1e-6)
    assert ae.analytic == 0.3
    ae = ut.asymptotic_elasticity(ut.logarithmic())
    assert ae.applicable and ae.satisfied
    assert ae.numeric == pytest.approx(0.0, abs=0.1)
    assert not ut.asymptotic_elasticity(ut.exponential(1.0)).applicable


@pytest.mark.parametrize("spec,grid", [
    (ut.power(0.5), np.linspace(0.5, 5.0, 20)),
    (ut.logarithmic(), np.linspace(0.5, 5.0, 20)),
    (ut.exponential(1.0), np.linspace(-2.0, 2.0, 20)),
    (ut.quadratic(1.0), np.linspace(-2.0, 2.0, 20)),
])
def test_concavity_probe(spec, grid):
    report = ut.concavity_probe(spec, grid, rel_tol=1e-4)
    assert report.passed
    assert report.min_second_derivative < 0


@given(fam=st.sampled_from(["power", "log", "exponential", "quadratic"]),
       x=st.floats(min_value=0.1, max_value=10.0),
       y=st.floats(min_value=0.1, max_value=10.0),
       w=st.floats(min_value=0.01, max_value=0.99))
@settings(max_examples=100, deadline=None)
def test_concavity_inequality(fam, x, y, w):
    spec = {"power": ut.power(0.5), "log": ut.logarithmic(),
            "exponential": ut.exponential(1.0), "quadratic": ut.quadratic(5.0)}[fam]
    mid = w * x + (1 - w) * y
    u_mid, _, _ = ut.evaluate(spec, np.array([mid]))
    u_x, _, _ = ut.evaluate(spec, np.array([x]))
    u_y, _, _ = ut.evaluate(spec, np.array([y]))
    assert u_mid[0] >= w * u_x[0] + (1 - w) * u_y[0] - 1e-9


def test_exponential_claim_bound_recorded():
    spec = ut.exponential(1.0, claim=lambda s, r: 0.1 * s[:, 0], claim_bound=2.0)
    assert spec.claim is not None
    assert spec.claim_bound == 2.0
