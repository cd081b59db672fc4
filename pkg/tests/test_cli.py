from __future__ import annotations

from pathlib import Path

import pytest

from hfda.cli import ConfigError, main, parse_config

REPO_CONFIGS = Path(__file__).parent.parent / "configs"


def write_config(tmp_path, body):
    path = tmp_path / "exp.ini"
    path.write_text(body)
    return path


MINIMAL = """\
[experiment]
model = fitzhugh_nagumo
seed = 7
"""

SMALL_FN = """\
[experiment]
model = fitzhugh_nagumo
seed = 7
h = 0.25

[observation]
period = 0.05
"""


def test_parse_minimal_config_fills_defaults(tmp_path):
    cfg = parse_config(write_config(tmp_path, MINIMAL))
    assert cfg.model == "fitzhugh_nagumo"
    assert cfg.h == 1.0
    assert cfg.obs_period == 0.01
    assert cfg.obs_sigma == 0.1
    assert cfg.race_budget == 1.0
    assert cfg.solver_kappa == 50
    assert cfg.table1_potps == (0.01, 0.1)


def test_parse_overrides_apply_last(tmp_path):
    path = write_config(tmp_path, MINIMAL + "\n[solver]\neta0 = 0.5\n")
    cfg = parse_config(path, overrides=["solver.eta0=0.01", "race.budget=2.5"])
    assert cfg.solver_eta0 == 0.01
    assert cfg.race_budget == 2.5


def test_parse_rejects_malformed_line(tmp_path):
    path = write_config(tmp_path, "[experiment]\nmodel = fitzhugh_nagumo\nfoo bar\n")
    with pytest.raises(ConfigError, match="line"):
        parse_config(path)


def test_parse_rejects_unknown_key(tmp_path):
    path = write_config(tmp_path, MINIMAL + "\n[solver]\nwarpdrive = 9\n")
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_config(path)
    with pytest.raises(ConfigError, match="unknown override key"):
        parse_config(write_config(tmp_path, MINIMAL), overrides=["solver.warpdrive=9"])


def test_parse_rejects_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        parse_config(tmp_path / "nope.ini")


def test_parse_requires_model(tmp_path):
    path = write_config(tmp_path, "[experiment]\nseed = 4\n")
    with pytest.raises(ConfigError, match="model"):
        parse_config(path)


@pytest.mark.parametrize("name", ["fitzhugh_nagumo", "lotka_volterra", "van_der_pol"])
def test_committed_configs_parse(name):
    cfg = parse_config(REPO_CONFIGS / f"{name}.ini")
    assert cfg.model == name


def test_simulate_is_idempotent(tmp_path, capsys):
    path = write_config(tmp_path, SMALL_FN)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", str(path), "--output-dir", str(out_a)]) == 0
    assert main(["simulate", "--config", str(path), "--output-dir", str(out_b)]) == 0
    csv_a = (out_a / "fitzhugh_nagumo_observations.csv").read_bytes()
    csv_b = (out_b / "fitzhugh_nagumo_observations.csv").read_bytes()
    assert csv_a == csv_b
    assert b"t,y1,y2,weight" in csv_a.splitlines()[0]


def test_modify_subcommand_row_count(tmp_path):
    path = write_config(tmp_path, SMALL_FN)
    out = tmp_path / "mod"
    code = main(
        [
            "modify",
            "--config",
            str(path),
            "--output-dir",
            str(out),
            "--modify",
            "systematic_random",
            "--potp",
            "0.1",
            "--seed",
            "3",
        ]
    )
    assert code == 0
    rows = (out / "fitzhugh_nagumo_systematic_random_observations.csv").read_text().splitlines()
    assert len(rows) == 1 + 100  # header + 10% of the 1000 observations


def test_check_subcommand_reports_and_passes(tmp_path, capsys):
    path = write_config(tmp_path, SMALL_FN)
    assert main(["check", "--config", str(path)]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 5
    assert "FAIL" not in out


def test_solve_subcommand_writes_trace(tmp_path):
    path = write_config(
        tmp_path,
        SMALL_FN
        + """
[solver]
name = gn
budget = 0
max_iter = 3
theta0 = reference

[reference]
max_iter = 10
gtol = 1e-2
""",
    )
    out = tmp_path / "solve"
    assert main(["solve", "--config", str(path), "--output-dir", str(out)]) == 0
    trace = (out / "fitzhugh_nagumo_gn_none.csv").read_text().splitlines()
    assert trace[0] == "time,error"
    times = [float(line.split(",")[0]) for line in trace[1:]]
    assert times == sorted(times)
    meta = (out / "fitzhugh_nagumo_gn_none.meta").read_text()
    assert "terminated_by" in meta and "solver = gn" in meta


def test_unknown_solver_exits_nonzero(tmp_path):
    path = write_config(tmp_path, SMALL_FN + "\n[solver]\nname = bfgs\n")
    assert main(["solve", "--config", str(path), "--output-dir", str(tmp_path / "x")]) == 2


def test_bad_config_exit_code(tmp_path):
    path = write_config(tmp_path, "[experiment]\nmodel = fitzhugh_nagumo\nfoo bar\n")
    assert main(["simulate", "--config", str(path)]) == 2
