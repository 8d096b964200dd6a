"""Constant-coefficient benchmarks: closed forms vs solvers vs brute force.

Runs the four utility families on a single Black-Scholes asset and prints a
comparison table of the value at time zero from every available route.
"""

import argparse

import numpy as np

from bellman_lab import bsde as bs
from bellman_lab import market as mk
from bellman_lab import utility as ut
from bellman_lab import valuation as vl
from bellman_lab import verify as vf


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--mu", type=float, default=0.1)
    parser.add_argument("--sigma", type=float, default=0.2)
    parser.add_argument("--n-paths", type=int, default=20000)
    parser.add_argument("--n-steps", type=int, default=100)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    theta = args.mu / args.sigma
    model = mk.black_scholes(mu=args.mu, sigma=args.sigma, s0=1.0)
    grid = mk.TimeGrid(T=1.0, n_steps=args.n_steps)
    ens = mk.simulate_paths(model, grid, args.n_paths, args.seed)
    x0 = 1.0

    print(f"mu={args.mu} sigma={args.sigma} theta={theta} T=1 x0={x0} "
          f"paths={args.n_paths} steps={args.n_steps} seed={args.seed}")
    print(f"{'family':<12} {'closed form':>12} {'bsde':>12} {'brute force':>12} "
          f"{'bf stderr':>10}")

    rows = []
    log_res = vl.log_value(model, ens, 0.0, x0)
    bf = vf.brute_force_value(model, ut.logarithmic(),
                              np.arange(0.0, 5.01, 0.25), [0.0], ens, x0)
    rows.append(("log", log_res.value, float("nan"), bf.best_value,
                 bf.best_stderr))

    spec = ut.power(0.5)
    v2 = vl.power_value_case2(model, ens, spec)
    sol = bs.solve(bs.BSDEProblem("power", np.ones(ens.n_paths), model, ens,
                                  q=spec.q))
    bf = vf.brute_force_value(model, spec, np.arange(0.0, 7.01, 0.25), [0.0],
                              ens, x0)
    rows.append(("power p=0.5", v2.value0(x0, ens), x0**0.5 * sol.V[:, 0].mean(),
                 bf.best_value, bf.best_stderr))

    spec = ut.exponential(1.0)
    ve = vl.exponential_value(model, ens, spec)
    sol = bs.solve(bs.BSDEProblem("exponential", np.ones(ens.n_paths), model,
                                  ens))
    bf = vf.brute_force_value(model, spec, np.arange(0.0, 5.01, 0.25), [0.0],
                              ens, x0)
    rows.append(("exponential", ve.value0(x0, ens),
                 -np.exp(-x0) * sol.V[:, 0].mean(), bf.best_value,
                 bf.best_stderr))

    spec = ut.quadratic(1.0)
    vq = vl.quadratic_value(model, ens, spec)
    sol = bs.solve(bs.BSDEProblem("quadratic", np.ones(ens.n_paths), model,
                                  ens))
    x0q = 0.5
    bf = vf.brute_force_value(model, spec, np.arange(0.0, 3.01, 0.25), [0.0],
                              ens, x0q)
    rows.append(("quadratic", vq.value0(x0q, ens),
                 1.0 - (x0q - 1.0) ** 2 * sol.V[:, 0].mean(), bf.best_value,
                 bf.best_stderr))

    for fam, closed, bsde_v, brute, se in rows:
        print(f"{fam:<12} {closed:>12.6f} {bsde_v:>12.6f} {brute:>12.6f} "
              f"{se:>10.2e}")


if __name__ == "__main__":
    main()
