"""Experiment configuration: sectioned key-value files parsed with configparser.

Grammar (INI):

    [model]
    family = black_scholes | cev | ou_factor
    mu, sigma, s0            (black_scholes, cev)
    beta                     (cev)
    kappa, mean, sigma_perp, r0, sigma   (ou_factor)

    [utility]
    family = log | power | exponential | quadratic
    p (power), gamma (exponential), b (quadratic)

    [grid]
    T, n_steps, n_paths, seed     (seed is mandatory, no entropy default)

    [solver]
    basis_degree, picard_iters, pde_n_space, pde_n_time

    [verify]
    test_times (comma list), proportions (lo:hi:step or comma list),
    rebalance_dates (comma list), x0, rel_allowance

    [output]
    directory, formats (comma subset of csv,json)
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from typing import Sequence

from bellman_lab import market as mk
from bellman_lab import utility as ut

SCHEMA_VERSION = 1

MODEL_FAMILIES = ("black_scholes", "cev", "ou_factor")
UTILITY_FAMILIES = ("log", "power", "exponential", "quadratic")


class ConfigError(Exception):
    """Invalid configuration; carries field-level messages."""

    def __init__(self, messages):
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


@dataclass(frozen=True)
class ModelSection:
    family: str
    mu: float = 0.1
    sigma: float = 0.2
    s0: float = 1.0
    beta: float = 1.0
    kappa: float = 1.0
    mean: float = 0.3
    sigma_perp: float = 0.3
    r0: float = 0.3


@dataclass(frozen=True)
class UtilitySection:
    family: str
    p: float = 0.5
    gamma: float = 1.0
    b: float = 1.0


@dataclass(frozen=True)
class GridSection:
    T: float
    n_steps: int
    n_paths: int
    seed: int


@dataclass(frozen=True)
class SolverSection:
    basis_degree: int = 3
    picard_iters: int = 3
    pde_n_space: int = 200
    pde_n_time: int = 200


@dataclass(frozen=True)
class VerifySection:
    test_times: Sequence[float] = (0.25, 0.5, 0.75)
    proportions: Sequence[float] = tuple(i * 0.25 for i in range(21))
    rebalance_dates: Sequence[float] = (0.0,)
    x0: float = 1.0
    rel_allowance: float = 0.01


@dataclass(frozen=True)
class OutputSection:
    directory: str = "out"
    formats: Sequence[str] = ("csv", "json")


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSection
    utility: UtilitySection
    grid: GridSection
    solver: SolverSection = field(default_factory=SolverSection)
    verify: VerifySection = field(default_factory=VerifySection)
    output: OutputSection = field(default_factory=OutputSection)

    def build_model(self) -> mk.MarketModel:
        m = self.model
        if m.family == "black_scholes":
            return mk.black_scholes(mu=m.mu, sigma=m.sigma, s0=m.s0)
        if m.family == "cev":
            return mk.cev(mu=m.mu, sigma=m.sigma, beta=m.beta, s0=m.s0)
        return mk.ou_factor(sigma=m.sigma, kappa=m.kappa, mean=m.mean,
                            sigma_perp=m.sigma_perp, s0=m.s0, r0=m.r0)

    def build_utility(self) -> ut.UtilitySpec:
        u = self.utility
        if u.family == "log":
            return ut.logarithmic()
        if u.family == "power":
            return ut.power(u.p)
        if u.family == "exponential":
            return ut.exponential(u.gamma)
        return ut.quadratic(u.b)

    def build_grid(self) -> mk.TimeGrid:
        return mk.TimeGrid(T=self.grid.T, n_steps=self.grid.n_steps)


def _float_list(raw: str) -> list:
    return [float(tok) for tok in raw.replace(",", " ").split()]


def _proportion_grid(raw: str) -> list:
    raw = raw.strip()
    if ":" in raw:
        lo, hi, step = (float(tok) for tok in raw.split(":"))
        if step <= 0 or hi < lo:
            raise ValueError("expected lo:hi:step with step > 0 and hi >= lo")
        n = int(round((hi - lo) / step))
        return [lo + i * step for i in range(n + 1)]
    return _float_list(raw)


def _get(parser, errors, section, key, cast, default=None, required=False):
    if not parser.has_option(section, key):
        if required:
            errors.append(f"[{section}] {key}: required field is missing")
        return default
    raw = parser.get(section, key)
    try:
        return cast(raw)
    except ValueError as exc:
        errors.append(f"[{section}] {key}: cannot parse {raw!r} ({exc})")
        return default


def load_config(path: str) -> ExperimentConfig:
    """Parse and validate a config file.  Raises ConfigError listing every
    invalid or missing field by section and name."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    errors = []
    if not read:
        raise ConfigError([f"config file not found or unreadable: {path}"])

    for required_section in ("model", "utility", "grid"):
        if not parser.has_section(required_section):
            errors.append(f"[{required_section}]: required section is missing")
    if errors:
        raise ConfigError(errors)

    family = _get(parser, errors, "model", "family", str, required=True)
    if family is not None and family not in MODEL_FAMILIES:
        errors.append(f"[model] family: {family!r} not in {MODEL_FAMILIES}")
    model = ModelSection(
        family=family or "black_scholes",
        mu=_get(parser, errors, "model", "mu", float, 0.1),
        sigma=_get(parser, errors, "model", "sigma", float, 0.2),
        s0=_get(parser, errors, "model", "s0", float, 1.0),
        beta=_get(parser, errors, "model", "beta", float, 1.0),
        kappa=_get(parser, errors, "model", "kappa", float, 1.0),
        mean=_get(parser, errors, "model", "mean", float, 0.3),
        sigma_perp=_get(parser, errors, "model", "sigma_perp", float, 0.3),
        r0=_get(parser, errors, "model", "r0", float, 0.3),
    )
    if model.sigma <= 0:
        errors.append("[model] sigma: must be positive")
    if model.s0 <= 0:
        errors.append("[model] s0: must be positive")

    ufamily = _get(parser, errors, "utility", "family", str, required=True)
    if ufamily is not None and ufamily not in UTILITY_FAMILIES:
        errors.append(f"[utility] family: {ufamily!r} not in {UTILITY_FAMILIES}")
    utility = UtilitySection(
        family=ufamily or "log",
        p=_get(parser, errors, "utility", "p", float, 0.5),
        gamma=_get(parser, errors, "utility", "gamma", float, 1.0),
        b=_get(parser, errors, "utility", "b", float, 1.0),
    )
    if ufamily == "power" and not (0.0 < utility.p < 1.0):
        errors.append("[utility] p: must lie in (0, 1)")
    if ufamily == "exponential" and utility.gamma <= 0:
        errors.append("[utility] gamma: must be positive")
    if ufamily == "quadratic" and utility.b <= 0:
        errors.append("[utility] b: must be positive")

    grid = GridSection(
        T=_get(parser, errors, "grid", "T", float, 1.0),
        n_steps=_get(parser, errors, "grid", "n_steps", int, 100),
        n_paths=_get(parser, errors, "grid", "n_paths", int, 10000),
        seed=_get(parser, errors, "grid", "seed", int, required=True, default=-1),
    )
    if grid.T <= 0:
        errors.append("[grid] T: must be positive")
    if grid.n_steps < 1:
        errors.append("[grid] n_steps: must be at least 1")
    if grid.n_paths < 2:
        errors.append("[grid] n_paths: must be at least 2")
    if parser.has_option("grid", "seed") and grid.seed < 0:
        errors.append("[grid] seed: must be a nonnegative integer")

    solver = SolverSection(
        basis_degree=_get(parser, errors, "solver", "basis_degree", int, 3),
        picard_iters=_get(parser, errors, "solver", "picard_iters", int, 3),
        pde_n_space=_get(parser, errors, "solver", "pde_n_space", int, 200),
        pde_n_time=_get(parser, errors, "solver", "pde_n_time", int, 200),
    ) if parser.has_section("solver") else SolverSection()
    if solver.basis_degree < 1:
        errors.append("[solver] basis_degree: must be at least 1")
    if solver.pde_n_space < 8 or solver.pde_n_time < 2:
        errors.append("[solver] pde grid: need pde_n_space >= 8 and pde_n_time >= 2")

    if parser.has_section("verify"):
        verify = VerifySection(
            test_times=tuple(_get(parser, errors, "verify", "test_times",
                                  _float_list, [0.25, 0.5, 0.75])),
            proportions=tuple(_get(parser, errors, "verify", "proportions",
                                   _proportion_grid,
                                   [i * 0.25 for i in range(21)])),
            rebalance_dates=tuple(_get(parser, errors, "verify", "rebalance_dates",
                                       _float_list, [0.0])),
            x0=_get(parser, errors, "verify", "x0", float, 1.0),
            rel_allowance=_get(parser, errors, "verify", "rel_allowance", float, 0.01),
        )
    else:
        verify = VerifySection()
    if any(t <= 0 or t >= grid.T for t in verify.test_times):
        errors.append("[verify] test_times: must lie strictly inside (0, T)")
    if verify.x0 <= 0 and utility.family in ("log", "power"):
        errors.append("[verify] x0: must be positive for log and power utilities")

    if parser.has_section("output"):
        formats = tuple(_get(parser, errors, "output", "formats",
                             lambda s: [tok.strip() for tok in s.split(",")],
                             ["csv", "json"]))
        for fmt in formats:
            if fmt not in ("csv", "json"):
                errors.append(f"[output] formats: unknown format {fmt!r}")
        output = OutputSection(
            directory=_get(parser, errors, "output", "directory", str, "out"),
            formats=formats,
        )
    else:
        output = OutputSection()

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(model=model, utility=utility, grid=grid,
                            solver=solver, verify=verify, output=output)


def effective_config_text(config: ExperimentConfig) -> str:
    """Render the fully resolved configuration back to INI text."""
    parser = configparser.ConfigParser()
    parser["model"] = {k: str(v) for k, v in vars(config.model).items()}
    parser["utility"] = {k: str(v) for k, v in vars(config.utility).items()}
    parser["grid"] = {k: str(v) for k, v in vars(config.grid).items()}
    parser["solver"] = {k: str(v) for k, v in vars(config.solver).items()}
    parser["verify"] = {
        "test_times": ", ".join(str(t) for t in config.verify.test_times),
        "proportions": ", ".join(str(p) for p in config.verify.proportions),
        "rebalance_dates": ", ".join(str(t) for t in config.verify.rebalance_dates),
        "x0": str(config.verify.x0),
        "rel_allowance": str(config.verify.rel_allowance),
    }
    parser["output"] = {
        "directory": config.output.directory,
        "formats": ", ".join(config.output.formats),
    }
    import io

    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
