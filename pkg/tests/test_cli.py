import json

import pytest

from chtumor import cli
from chtumor import config as cfgmod
from chtumor.config import ConfigError, parse_text

SMALL_SIM = """
[model]
alpha = 0.5
beta = 0.5
T = 0.05

[proliferation]
value = 1.0

[grid]
n = 32

[solver]
dt = 0.01
"""


def run_main(args, tmp_path, name="out"):
    out = tmp_path / name
    code = cli.main(args + ["--out", str(out)])
    return code, out


# --- config parsing --------------------------------------------------------------

def test_minimal_config_gets_defaults():
    cfg = parse_text("[model]\nalpha = 0.5\nbeta = 0.5\n", "simulate")
    assert cfg.get("model", "gamma") == 1.0
    assert cfg.get("potential", "eps") == 1e-3
    assert cfg.get("solver", "dt") == 1e-3
    assert cfg.get("proliferation", "kind") == "constant"


def test_command_specific_defaults():
    assert parse_text("", "sweep-beta").get("sweep", "fixed") == 0.05
    assert parse_text("", "sweep-alpha").get("sweep", "fixed") == 0.5


def test_alpha_sweep_rejects_bump():
    with pytest.raises(ConfigError, match="p is a nonnegative constant"):
        parse_text("[proliferation]\nkind = smooth_bump\n", "sweep-alpha")


def test_all_violations_reported():
    with pytest.raises(ConfigError) as exc:
        parse_text("[model]\nalpha = 0.5\n[solver]\ndt = -1e-3\n[bogus]\nx = 1\n[grid]\nnn = 3\n", "simulate")
    text = "\n".join(exc.value.problems)
    assert "unknown section [bogus]" in text
    assert "unknown key grid.nn" in text
    with pytest.raises(ConfigError) as exc:
        parse_text("[model]\nalpha = 0.5\n[solver]\ndt = -1e-3\n", "simulate")
    text = "\n".join(exc.value.problems)
    assert "missing required key model.beta" in text
    assert "solver" in text and "dt" in text


def test_bad_values():
    with pytest.raises(ConfigError, match="cannot read"):
        parse_text("[model]\nalpha = abc\nbeta = 0.5\n", "simulate")
    with pytest.raises(ConfigError, match="alpha = beta = 0"):
        parse_text("[model]\nalpha = 0\nbeta = 0\n", "simulate")
    with pytest.raises(ConfigError, match="nonuniq.L must exceed 1"):
        parse_text("[nonuniq]\nL = 0.5\n", "nonuniq")
    with pytest.raises(ConfigError, match="strictly decreasing"):
        parse_text("[sweep]\nvalues = 0.01, 0.1, 0.001\n", "sweep-beta")


def test_command_conflict():
    with pytest.raises(ConfigError, match="config is for"):
        parse_text("[run]\ncommand = nonuniq\n", "simulate")
    assert parse_text("[run]\ncommand = nonuniq\n").command == "nonuniq"


@pytest.mark.parametrize("command", cfgmod.COMMANDS)
def test_round_trip(command):
    cfg = parse_text(cli.default_config_path(command).read_text(), command)
    again = parse_text(cfg.to_ini(), command)
    assert again.values == cfg.values
    assert again.to_ini() == cfg.to_ini()


def test_round_trip_preserves_floats():
    cfg = parse_text("[model]\nalpha = 0.1\nbeta = 0.30000000000000004\n", "simulate")
    assert parse_text(cfg.to_ini(), "simulate").get("model", "beta") == 0.30000000000000004


def test_defaults_table():
    table = cfgmod.defaults_table_markdown()
    assert "`solver.dt`" in table and "`potential.eps`" in table


# --- runs --------------------------------------------------------------------------

def test_simulate_artifacts(tmp_path):
    (tmp_path / "run.ini").write_text(SMALL_SIM)
    code, out = run_main(["simulate", "--config", str(tmp_path / "run.ini")], tmp_path)
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    res = summary["result"]
    assert summary["command"] == "simulate"
    assert res["steps"] == 5 and res["conservation"]["ok"]
    assert (out / "effective_config.ini").exists()
    head = (out / "timeseries.csv").read_text().splitlines()
    assert head[0].startswith("# effective config")
    fields = (out / "fields.csv").read_text().splitlines()
    header = next(line for line in fields if not line.startswith("#"))
    assert header == "t,cell,x,mu,phi,sigma,xi"
    # the effective config reproduces the run
    assert parse_text((out / "effective_config.ini").read_text()).values["model"]["T"] == 0.05


def test_simulate_is_deterministic(tmp_path):
    (tmp_path / "run.ini").write_text(SMALL_SIM)
    args = ["simulate", "--config", str(tmp_path / "run.ini")]
    _, a = run_main(args, tmp_path, "a")
    _, b = run_main(args, tmp_path, "b")
    for name in ("summary.json", "fields.csv", "timeseries.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_csv_full_precision(tmp_path):
    (tmp_path / "run.ini").write_text(SMALL_SIM)
    _, out = run_main(["simulate", "--config", str(tmp_path / "run.ini"), "--format", "csv"], tmp_path)
    assert not (out / "summary.json").exists()
    rows = [r for r in (out / "fields.csv").read_text().splitlines() if not r.startswith("#")][1:]
    phi = rows[40].split(",")[4]
    assert float(repr(float(phi))) == float(phi)
    assert len(phi.lstrip("-").replace(".", "").split("e")[0].lstrip("0")) >= 15


def test_nonuniq_packaged_config(tmp_path):
    code, out = run_main(["nonuniq"], tmp_path)
    assert code == 0
    res = json.loads((out / "summary.json").read_text())["result"]
    assert res["residual_ok"] and res["separated"]
    assert res["separation"] >= 0.1
    assert (out / "nonuniq.csv").read_text().startswith("candidate,r1,r2,r3")


def test_manufactured_small(tmp_path):
    ini = "[manufactured]\nns = 8, 16\ndts = 0.04, 0.02\ntime_n = 64\n[model]\nT = 0.08\n"
    (tmp_path / "m.ini").write_text(ini)
    code, out = run_main(["manufactured", "--config", str(tmp_path / "m.ini")], tmp_path)
    assert code == 0
    res = json.loads((out / "summary.json").read_text())["result"]
    assert len(res["space"]["ratios"]) == 1 and len(res["time"]["ratios"]) == 1
    assert (out / "manufactured.csv").read_text().count("\n") == 5


@pytest.mark.slow
def test_sweep_beta_packaged_config(tmp_path):
    code, out = run_main(["sweep-beta", "--jobs", "2"], tmp_path)
    assert code == 0
    res = json.loads((out / "summary.json").read_text())["result"]
    assert res["study"]["rate"] >= 0.45 and res["rate_ok"]
    assert (out / "study_loglog.dat").exists()


def test_config_error_exit(tmp_path):
    (tmp_path / "bad.ini").write_text("[solver]\ndt = -1\n")
    code, out = run_main(["simulate", "--config", str(tmp_path / "bad.ini")], tmp_path)
    assert code == cli.EXIT_CONFIG
    fail = json.loads((out / "failure.json").read_text())
    assert fail["error"] == "ConfigError"
    assert any("model.alpha" in p for p in fail["problems"])


def test_missing_config_file(tmp_path):
    code, out = run_main(["simulate", "--config", str(tmp_path / "nope.ini")], tmp_path)
    assert code == cli.EXIT_CONFIG
    assert "cannot read" in json.loads((out / "failure.json").read_text())["message"]


def test_solver_failure_exit(tmp_path):
    ini = SMALL_SIM.replace("dt = 0.01", "dt = 0.05\nnewton_max = 1").replace("T = 0.05", "T = 0.1")
    (tmp_path / "f.ini").write_text(ini)
    code, out = run_main(["simulate", "--config", str(tmp_path / "f.ini")], tmp_path)
    assert code == cli.EXIT_SOLVER
    fail = json.loads((out / "failure.json").read_text())
    assert fail["error"] == "StepFailure" and "residual" in fail["message"]


def test_bad_jobs(tmp_path):
    code, _ = run_main(["nonuniq", "--jobs", "0"], tmp_path)
    assert code == cli.EXIT_CONFIG


def test_defaults_subcommand(capsys):
    assert cli.main(["defaults"]) == 0
    assert "| key | default | meaning |" in capsys.readouterr().out
