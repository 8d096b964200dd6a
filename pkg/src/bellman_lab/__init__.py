"""Numerical laboratory for utility maximization in incomplete diffusion markets.

Subpackages cover the market simulator, the four utility families, closed-form
value processes and optimal strategies, a backward regression Monte Carlo
solver for the scalar quadratic-generator BSDEs, finite-difference solvers for
the associated value PDEs, and an executable optimality-principle test bench.
"""

from bellman_lab import bsde, market, pde, utility, valuation, verify

__all__ = ["market", "utility", "valuation", "bsde", "pde", "verify"]

__version__ = "0.1.0"
