import numpy as np
import pytest

from bellman_lab import market as mk

MU, SIGMA, S0 = 0.1, 0.2, 1.0
THETA = MU / SIGMA  # 0.5


@pytest.fixture(scope="session")
def bs_model():
    return mk.black_scholes(mu=MU, sigma=SIGMA, s0=S0)


@pytest.fixture(scope="session")
def grid():
    return mk.TimeGrid(T=1.0, n_steps=100)


@pytest.fixture(scope="session")
def bs_ensemble(bs_model, grid):
    return mk.simulate_paths(bs_model, grid, 10000, 7)


@pytest.fixture(scope="session")
def bs_ensemble_small(bs_model, grid):
    return mk.simulate_paths(bs_model, grid, 2000, 3)


@pytest.fixture(scope="session")
def ou_model():
    return mk.ou_factor(sigma=SIGMA, kappa=1.0, mean=0.3, sigma_perp=0.3,
                        s0=S0, r0=0.3)


@pytest.fixture(scope="session")
def ou_ensemble(ou_model, grid):
    return mk.simulate_paths(ou_model, grid, 10000, 13)


def two_sided(mean, target, stderr, n_sigma=3, abs_slack=0.0):
    return abs(mean - target) <= n_sigma * stderr + abs_slack


def stderr_of(samples):
    samples = np.asarray(samples)
    return samples.std(ddof=1) / np.sqrt(len(samples))
