import json
import os

import pytest

from bellman_lab import cli
from bellman_lab.config import ConfigError, load_config

BASE_CONFIG = """\
[model]
family = black_scholes
mu = 0.1
sigma = 0.2
s0 = 1.0

[utility]
family = {family}

[grid]
T = 1.0
n_steps = 100
n_paths = 3000
seed = 11

[solver]
pde_n_space = 101
pde_n_time = 64

[verify]
test_times = 0.25, 0.5, 0.75
proportions = 0:5:0.25
rebalance_dates = 0.0
x0 = 1.0

[output]
directory = {outdir}
"""


def write_config(tmp_path, family="log", **edits):
    text = BASE_CONFIG.format(family=family, outdir=tmp_path / "out")
    for old, new in edits.items():
        text = text.replace(old, new)
    path = tmp_path / "exp.ini"
    path.write_text(text)
    return str(path)


def test_missing_seed_names_field(tmp_path):
    path = write_config(tmp_path, **{"seed = 11\n": ""})
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert any("seed" in msg for msg in exc.value.messages)
    assert cli.main(["verify", "--config", path]) == 2


def test_missing_file_is_config_error(tmp_path):
    assert cli.main(["verify", "--config", str(tmp_path / "nope.ini")]) == 2


def test_invalid_values_collect_messages(tmp_path):
    path = write_config(tmp_path, **{"sigma = 0.2": "sigma = -1",
                                     "T = 1.0": "T = 0"})
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    joined = " ".join(exc.value.messages)
    assert "[model] sigma" in joined and "[grid] T" in joined


def test_verify_log_pipeline_passes(tmp_path, capsys):
    path = write_config(tmp_path)
    assert cli.main(["verify", "--config", path]) == 0
    out = tmp_path / "out"
    report = json.loads((out / "verify_report.json").read_text())
    assert report["passed"]
    assert report["schema_version"] == 1
    assert all(v["verdict"] == "martingale_ok"
               for v in report["optimal"]["verdicts"])
    assert (out / "verify_report.txt").exists()
    assert (out / "effective_config.ini").exists()


def test_pde_convergence_subcommand(tmp_path):
    path = write_config(tmp_path, family="power")
    assert cli.main(["pde", "--config", path]) == 0
    table = json.loads((tmp_path / "out" / "pde_convergence.json").read_text())
    ratios = [row[-1] for row in table["rows"][1:]]
    assert all(3.0 <= r <= 5.0 for r in ratios)


def test_idempotent_outputs(tmp_path):
    path = write_config(tmp_path)
    assert cli.main(["value", "--config", path]) == 0
    out = tmp_path / "out"
    first = {}
    for name in os.listdir(out):
        if name != "run_metadata.json":  # timestamp lives only here
            first[name] = (out / name).read_bytes()
    assert cli.main(["value", "--config", path]) == 0
    for name, blob in first.items():
        assert (out / name).read_bytes() == blob


def test_all_pipeline_power(tmp_path):
    path = write_config(tmp_path, family="power")
    assert cli.main(["all", "--config", path]) == 0
    out = tmp_path / "out"
    for artifact in ("ensemble_summary.csv", "value_curve.csv", "bsde_curve.csv",
                     "verify_report.json", "summary.json"):
        assert (out / artifact).exists(), artifact
    summary = json.loads((out / "summary.json").read_text())
    assert summary["passed"]


def test_bsde_rejects_log_family(tmp_path):
    path = write_config(tmp_path, family="log")
    assert cli.main(["bsde", "--config", path]) == 2


def test_out_flag_overrides_directory(tmp_path):
    path = write_config(tmp_path)
    alt = tmp_path / "elsewhere"
    assert cli.main(["simulate", "--config", path, "--out", str(alt)]) == 0
    assert (alt / "ensemble_summary.csv").exists()


def test_thread_cap_env(monkeypatch):
    from bellman_lab._threads import max_workers
    monkeypatch.setenv("BELLMAN_LAB_THREADS", "2")
    assert max_workers() == 2
    monkeypatch.setenv("BELLMAN_LAB_THREADS", "junk")
    assert max_workers(default=3) >= 1
