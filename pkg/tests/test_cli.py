import csv
import json

import numpy as np
import pytest

from conftest import CONFIGS, SHIPPED
from mpe_games.cli import EXIT_DIVERGED, EXIT_INVALID, EXIT_IO, EXIT_OK, main
from mpe_games.export import TABLES, read_trace


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize("path", SHIPPED, ids=lambda p: p.name)
def test_validate_shipped(path, capsys):
    assert main(["validate", str(path)]) == EXIT_OK
    assert "valid" in capsys.readouterr().out


def test_validate_rejects(capsys):
    cfg = str(CONFIGS / "pursuit_3v1.toml")
    assert main(["validate", cfg, "--set", "pursuers.lambda_cross=0.0", "--set", "pursuers.lambda_team=0.0",
                 "--set", "pursuers.gamma=1.0"]) == EXIT_INVALID
    assert "min eigenvalue" in capsys.readouterr().out
    assert main(["validate", cfg, "--set", "targeting.interval=0.015"]) == EXIT_INVALID
    assert "multiple" in capsys.readouterr().out


def test_bad_toml_and_missing_file(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[scenario\n")
    assert main(["validate", str(bad)]) == EXIT_INVALID
    assert "line 1" in capsys.readouterr().err
    assert main(["validate", str(tmp_path / "none.toml")]) == EXIT_IO


def test_unwritable_output_is_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["run", str(CONFIGS / "pursuit_3v1.toml"), "--set", "scenario.t_final=0", "-o", str(blocker / "out")]) == EXIT_IO


def test_run_zero_horizon(tmp_path):
    assert main(["run", str(CONFIGS / "pursuit_3v1.toml"), "--set", "scenario.t_final=0", "-o", str(tmp_path)]) == EXIT_OK
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["steps"] == 0
    for name in ("trace.csv", "events.jsonl", "weights.csv", "meta.json"):
        assert (tmp_path / name).exists()


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("MPE_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["run", str(CONFIGS / "pursuit_3v1.toml"), "--set", "scenario.t_final=0"]) == EXIT_OK
    assert (tmp_path / "env" / "trace.csv").exists()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergent_run_exit_code(tmp_path):
    cfg = str(CONFIGS / "riccati_1v1.toml")
    code = main(["run", cfg, "--set", "dynamics.a=[[400.0, 1.0], [0.0, 400.0]]", "--set", "scenario.mode=\"fixed_policy\"",
                 "--set", "scenario.stop_on_capture=false", "-o", str(tmp_path)])
    assert code == EXIT_DIVERGED
    assert "divergence" in (tmp_path / "events.jsonl").read_text()


def test_pi_converges(tmp_path):
    assert main(["pi", str(CONFIGS / "riccati_1v1.toml"), "-o", str(tmp_path)]) == EXIT_OK
    hist = rows(tmp_path / "pi_history.csv")
    assert float(hist[-1]["value_change"]) <= 1e-3
    assert json.loads((tmp_path / "summary.json").read_text())["converged"]


def test_pi_nonconvergence_exit(tmp_path):
    assert main(["pi", str(CONFIGS / "riccati_1v1.toml"), "--set", "pi.max_iters=1", "-o", str(tmp_path)]) == EXIT_DIVERGED
    assert len(rows(tmp_path / "pi_history.csv")) == 1


def test_nash_check_table(tmp_path):
    assert main(["nash-check", str(CONFIGS / "riccati_1v1.toml"), "--set", "scenario.t_final=0.5",
                 "--agents", "p0", "--factors", "0.5", "--rollouts", "2", "-o", str(tmp_path)]) == EXIT_OK
    t = rows(tmp_path / "nash.csv")
    assert [r["factor"] for r in t] == ["1", "0.5"] and t[0]["holds"] == "True"


def test_capture_study_one_seed(tmp_path):
    assert main(["capture-study", str(CONFIGS / "pursuit_3v1.toml"), "--seeds", "1", "-o", str(tmp_path)]) == EXIT_OK
    t = {r["layout"]: r for r in rows(tmp_path / "capture_study.csv")}
    assert t["selection"]["captured"] == "yes" and t["frozen"]["captured"] == "no"


def test_export_tables(tmp_path):
    run_dir = tmp_path / "run"
    assert main(["run", str(CONFIGS / "pursuit_3v1.toml"), "--set", "scenario.t_final=0.5", "-o", str(run_dir)]) == EXIT_OK
    assert main(["export-plots", str(run_dir / "trace.csv"), "-o", str(tmp_path / "tab")]) == EXIT_OK
    meta, cols, data = read_trace(run_dir / "trace.csv")
    for name in TABLES:
        assert (tmp_path / "tab" / f"{name}.csv").exists()
    dist = rows(tmp_path / "tab" / "distances.csv")
    assert len(dist) == len(data) * 3
    idx = {c: i for i, c in enumerate(cols)}
    for r in dist[::37]:
        k = int(r["step"])
        row = data[data[:, 0] == k][0]
        xp = np.array([row[idx[f"x_{r['pursuer']}_{c}"]] for c in range(2)])
        xe = np.array([row[idx[f"x_{r['evader']}_{c}"]] for c in range(2)])
        assert abs(float(r["distance"]) - np.linalg.norm(xp - xe)) <= 1e-12


def test_export_empty_trace_headers_only(tmp_path):
    src = tmp_path / "trace.csv"
    src.write_text("# mpe-trace v1\n# shape=1v1 n=2 position=0\nstep,time,x_p0_0,x_p0_1,x_e0_0,x_e0_1\n")
    assert main(["export-plots", str(src), "-o", str(tmp_path / "tab")]) == EXIT_OK
    for name in TABLES:
        assert len((tmp_path / "tab" / f"{name}.csv").read_text().splitlines()) == 1


def test_export_rejects_unversioned(tmp_path):
    src = tmp_path / "trace.csv"
    src.write_text("step,time\n0,0\n")
    assert main(["export-plots", str(src), "-o", str(tmp_path / "tab")]) == EXIT_INVALID


def test_outputs_byte_identical(tmp_path):
    args = ["run", str(CONFIGS / "pursuit_3v1.toml"), "--set", "scenario.t_final=1.0"]
    assert main(args + ["-o", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["-o", str(tmp_path / "b")]) == EXIT_OK
    for name in ("trace.csv", "events.jsonl", "summary.json", "weights.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
