"""Experiment runner.

Usage: bellman-lab <subcommand> --config <path> [--out <dir>]

Subcommands: simulate, value, bsde, pde, verify, all.  Exit status 0 when all
enabled checks pass, 1 on a failed check (the failing report path is printed),
2 on an invalid configuration with field-level messages.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time

import numpy as np

from bellman_lab import bsde as bs
from bellman_lab import market as mk
from bellman_lab import pde
from bellman_lab import valuation as vl
from bellman_lab import verify as vf
from bellman_lab.config import (SCHEMA_VERSION, ConfigError, ExperimentConfig,
                                effective_config_text, load_config)


def _to_jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {k: _to_jsonable(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    return obj


def _write_json(path: str, payload: dict):
    payload = dict(_to_jsonable(payload))
    payload["schema_version"] = SCHEMA_VERSION
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: str, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in row])


def _prepare_out(config: ExperimentConfig, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "effective_config.ini"), "w") as fh:
        fh.write(effective_config_text(config))
    _write_json(os.path.join(out_dir, "run_metadata.json"), {
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "seed": config.grid.seed,
    })
    return out_dir


def _ensemble(config: ExperimentConfig) -> mk.PathEnsemble:
    return mk.simulate_paths(config.build_model(), config.build_grid(),
                             config.grid.n_paths, config.grid.seed)


def _value_process(config: ExperimentConfig, ensemble: mk.PathEnsemble):
    model = config.build_model()
    utility = config.build_utility()
    fam = utility.family
    if fam == "log":
        return vl.log_value(model, ensemble, 0.0, config.verify.x0,
                            degree=config.solver.basis_degree).process
    if fam == "power":
        return vl.power_value_case2(model, ensemble, utility,
                                    degree=config.solver.basis_degree)
    if fam == "exponential":
        return vl.exponential_value(model, ensemble, utility, case="case2",
                                    degree=config.solver.basis_degree)
    return vl.quadratic_value(model, ensemble, utility,
                              degree=config.solver.basis_degree)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(config: ExperimentConfig, out: str) -> int:
    ens = _ensemble(config)
    model = config.build_model()
    K = mk.mean_variance_tradeoff(ens, model)
    rows = []
    for k, t in enumerate(ens.grid.knots):
        s = ens.S[:, k, 0]
        r = ens.R[:, k, 0] if model.k > 0 else np.zeros(ens.n_paths)
        rows.append([float(t), float(s.mean()), float(s.std(ddof=1)),
                     float(r.mean()), float(r.std(ddof=1)), float(K[:, k].mean())])
    _write_csv(os.path.join(out, "ensemble_summary.csv"),
               ["t", "s_mean", "s_std", "r_mean", "r_std", "tradeoff_mean"], rows)
    return 0


def cmd_value(config: ExperimentConfig, out: str) -> int:
    ens = _ensemble(config)
    value = _value_process(config, ens)
    vl.export_value_curve(value, os.path.join(out, "value_curve.csv"))
    payload = {
        "family": config.utility.family,
        "value0": value.value0(config.verify.x0, ens),
        "factor0": value.factor0(ens),
        "x0": config.verify.x0,
    }
    if value.certificate is not None:
        payload["certificate"] = value.certificate
    _write_json(os.path.join(out, "value.json"), payload)
    return 0


def cmd_bsde(config: ExperimentConfig, out: str) -> int:
    fam = config.utility.family
    if fam == "log":
        print("[utility] family: bsde subcommand needs a multiplicative family "
              "(power, exponential, quadratic); log is additive", file=sys.stderr)
        return 2
    ens = _ensemble(config)
    utility = config.build_utility()
    terminal = np.ones(ens.n_paths)
    q = utility.q if fam == "power" else None
    problem = bs.BSDEProblem(driver_kind=fam, terminal=terminal,
                             model=config.build_model(), ensemble=ens, q=q)
    solution = bs.solve(problem, basis_degree=config.solver.basis_degree,
                        picard_iters=config.solver.picard_iters)
    curve = bs.value_curve(solution)
    _write_csv(os.path.join(out, "bsde_curve.csv"), ["t", "mean_value_factor", "stderr"],
               [[float(a), float(b), float(c)] for a, b, c in curve])
    _write_json(os.path.join(out, "bsde_diagnostics.json"), {
        "family": fam,
        "value0": float(solution.V[:, 0].mean()),
        "floor_fraction": solution.floor_fraction,
        "max_orthogonal_residual": float(np.max(solution.residual_orthogonal)),
        "diagnostics": solution.diagnostics,
    })
    return 0


def cmd_pde(config: ExperimentConfig, out: str) -> int:
    """Convergence study on the constant-coefficient power price equation,
    measured against the analytic exponential solution, doubling space and
    time resolution together."""
    m = config.model
    utility = config.build_utility()
    q = utility.q if utility.family == "power" else -1.0
    theta = m.mu / m.sigma
    T = config.grid.T
    exact0 = float(np.exp(0.5 * q * (q - 1.0) * theta**2 * T))
    rows = []
    errors = []
    spec = pde.almost_complete_power_spec(sigma=m.sigma, theta=theta, q=q,
                                          s0=m.s0, T=T,
                                          n_space=config.solver.pde_n_space,
                                          n_time=config.solver.pde_n_time)
    for level in range(3):
        sol = pde.solve_linear(spec)
        v0 = float(sol(0.0, np.log(m.s0)))
        err = abs(v0 - exact0)
        errors.append(err)
        ratio = errors[-2] / err if level > 0 and err > 0 else float("nan")
        rows.append([level, spec.n_space, spec.n_time, v0, err, float(ratio)])
        spec = spec.refined()
    _write_csv(os.path.join(out, "pde_convergence.csv"),
               ["level", "n_space", "n_time", "value0", "error", "ratio"], rows)
    final_ratio = rows[-1][-1]
    passed = bool(np.isfinite(final_ratio) and 3.0 <= final_ratio <= 5.0)
    _write_json(os.path.join(out, "pde_convergence.json"), {
        "exact_value0": exact0, "rows": rows, "final_ratio": final_ratio,
        "passed": passed,
    })
    if not passed:
        print(f"check failed: {os.path.join(out, 'pde_convergence.json')}",
              file=sys.stderr)
        return 1
    return 0


def _verdict_lines(tag: str, report: vf.OptimalityReport):
    lines = [f"{tag:28s} baseline {report.baseline:+.6f}  "
             f"clip_events {report.clip_events}"]
    for v in report.verdicts:
        lines.append(f"  t={v.t:5.2f}  mean {v.mean:+.6f}  stderr {v.stderr:.2e}  "
                     f"z {v.z_score:+7.2f}  {v.verdict}")
    return lines


def cmd_verify(config: ExperimentConfig, out: str) -> int:
    model = config.build_model()
    utility = config.build_utility()
    ens = _ensemble(config)
    value = _value_process(config, ens)
    x0 = config.verify.x0
    times = config.verify.test_times

    optimal_rule = vl.strategy_from_value(value, model)
    optimal = vf.supermartingale_test(value, optimal_rule, ens, x0, times,
                                      optimal=True)
    zero = vf.supermartingale_test(value, mk.zero_rule(), ens, x0, times)
    cross = vf.forward_sde_crosscheck(value, model, ens, x0,
                                      rel_allowance=config.verify.rel_allowance)
    brute = vf.brute_force_value(model, utility, config.verify.proportions,
                                 config.verify.rebalance_dates, ens, x0)
    v0 = value.value0(x0, ens)
    brute_ok = brute.best_value <= v0 + 2.0 * brute.best_stderr + 1e-12
    checks = {
        "optimal_martingale": optimal.passed,
        "zero_rule_supermartingale": zero.passed,
        "forward_crosscheck": cross.passed,
        "brute_force_bound": bool(brute_ok),
        "optimal_clipping_zero": optimal.clip_events == 0,
    }
    report_path = os.path.join(out, "verify_report.json")
    _write_json(report_path, {
        "family": utility.family, "value0": v0,
        "optimal": optimal, "zero_rule": zero, "crosscheck": cross,
        "brute_force": {
            "argmax": list(brute.argmax), "best_value": brute.best_value,
            "best_stderr": brute.best_stderr,
            "boundary_attained": brute.boundary_attained,
        },
        "checks": checks, "passed": all(checks.values()),
    })
    lines = [f"utility {utility.family}  V(0, x0={x0}) = {v0:+.6f}", ""]
    lines += _verdict_lines("optimal rule (martingale)", optimal)
    lines += _verdict_lines("zero rule (supermartingale)", zero)
    lines += [
        "",
        f"forward cross-check: E[U(X*_T)] {cross.expected_utility:+.6f}  "
        f"target {cross.value0:+.6f}  tol {cross.tolerance:.2e}  "
        f"{'pass' if cross.passed else 'FAIL'}",
        f"brute force: best {brute.best_value:+.6f} (stderr {brute.best_stderr:.2e}) "
        f"at {tuple(float(p) for p in brute.argmax)}  "
        f"bound {'pass' if brute_ok else 'FAIL'}",
        "",
        "checks: " + "  ".join(f"{k}={'pass' if ok else 'FAIL'}"
                               for k, ok in sorted(checks.items())),
    ]
    with open(os.path.join(out, "verify_report.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    if not all(checks.values()):
        print(f"check failed: {report_path}", file=sys.stderr)
        return 1
    return 0


def cmd_all(config: ExperimentConfig, out: str) -> int:
    status = 0
    for step in (cmd_simulate, cmd_value) + (
            () if config.utility.family == "log" else (cmd_bsde,)) + (cmd_verify,):
        rc = step(config, out)
        if rc == 2:
            return 2
        status = max(status, rc)
    _write_json(os.path.join(out, "summary.json"), {
        "family": config.utility.family, "passed": status == 0,
    })
    return status


COMMANDS = {
    "simulate": cmd_simulate,
    "value": cmd_value,
    "bsde": cmd_bsde,
    "pde": cmd_pde,
    "verify": cmd_verify,
    "all": cmd_all,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bellman-lab",
        description="utility-maximization laboratory: simulate, value, solve, verify")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the INI config")
        p.add_argument("--out", default=None, help="output directory override")
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        for msg in exc.messages:
            print(msg, file=sys.stderr)
        return 2
    out = _prepare_out(config, args.out or config.output.directory)
    return COMMANDS[args.subcommand](config, out)


if __name__ == "__main__":
    sys.exit(main())
