import json

import pytest

from agebif import cli
from agebif.spatial import ConvergenceError
from agebif.verify import CheckRecord, RunReport

COARSE = """
[grid]
n_interior = 8
[age]
steps = 16
[run]
eta = [1.2]
xi = [1.5]
xi_limit = 2.0
eta_limit = 2.0
"""


def write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def run(tmp_path, command, text, out="out"):
    return cli.main([command, "--config", write(tmp_path, text), "--out", str(tmp_path / out)])


def test_eigen_summary(tmp_path):
    assert run(tmp_path, "eigen", "[grid]\nn_interior = 99\n[age]\nsteps = 16") == 0
    data = json.loads((tmp_path / "out" / "eigen.json").read_text())
    assert data["relative_error"] <= 1e-12
    assert abs(data["radius_prey"] - 1.0) <= 1e-8


def test_diagram_is_deterministic(tmp_path):
    assert run(tmp_path, "diagram", COARSE, "one") == 0
    assert run(tmp_path, "diagram", COARSE, "two") == 0
    one = sorted(p.name for p in (tmp_path / "one").iterdir())
    assert "bifpoints.json" in one and "semitrivial_prey.csv" in one
    assert "branch_B3_in_xi_eta1.2.csv" in one and "branch_S3_in_eta_xi1.5.csv" in one
    for name in one:
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()
    status = json.loads((tmp_path / "one" / "status.json").read_text())
    assert status == {"completed": ["bifpoints", "continue", "semitrivial"], "error": None, "partial": False}
    header = (tmp_path / "one" / "branch_B3_in_xi_eta1.2.csv").read_text().splitlines()[0]
    assert header == "param,sup_u,sup_v,l2_u,l2_v,residual,termination"


def test_empty_ranges_succeed(tmp_path):
    text = "[grid]\nn_interior = 8\n[age]\nsteps = 16\n[run]\neta = []\nxi = []\neta_max = 2.0\nxi_max = 2.0"
    assert run(tmp_path, "diagram", text) == 0
    out = tmp_path / "out"
    assert json.loads((out / "branches.json").read_text()) == []
    assert (out / "semitrivial_prey.csv").read_text().count("\n") == 1


def test_formats_select_outputs(tmp_path):
    text = "[grid]\nn_interior = 8\n[age]\nsteps = 16\n[run]\neta = [1.5]\nxi = []\n[output]\nformats = [\"json\"]"
    assert run(tmp_path, "semitrivial", text) == 0
    assert not (tmp_path / "out").exists() or not list((tmp_path / "out").glob("*.csv"))


def test_bad_config_exits_one(tmp_path, capsys):
    assert run(tmp_path, "eigen", "[params]\nalpha1 = -1") == 1
    assert "config error" in capsys.readouterr().err
    assert cli.main(["eigen", "--config", str(tmp_path / "missing.toml")]) == 1


def test_unusable_discretization_exits_one(tmp_path):
    assert run(tmp_path, "semitrivial", "[grid]\nn_interior = 8\n[age]\nsteps = 16\n[run]\neta = [5.0]") == 1


def test_solver_failure_exits_two(tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        raise ConvergenceError("forced")

    monkeypatch.setattr(cli, "prey_state", broken)
    assert run(tmp_path, "semitrivial", "[grid]\nn_interior = 8\n[age]\nsteps = 16\n[run]\neta = [1.5]") == 2


def test_diagram_marks_partial_output(tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        raise ConvergenceError("forced")

    monkeypatch.setattr(cli, "prey_state", broken)
    text = "[grid]\nn_interior = 8\n[age]\nsteps = 16\n[run]\neta = []\nxi = []\neta_max = 2.0\nxi_max = 2.0"
    assert run(tmp_path, "diagram", text.replace("eta = []", "eta = [1.5]")) == 2
    status = json.loads((tmp_path / "out" / "status.json").read_text())
    assert status["partial"] is True and "continue" in status["completed"]


def test_verify_failure_exits_three(tmp_path, monkeypatch, capsys):
    def fake_suite(cfg, seed=0, parallel=False):
        rec = CheckRecord("normalization_prey", "claim", False, 1.01, 1e-8)
        return RunReport([rec], {"total": 0.0}, cfg.echo())

    monkeypatch.setattr(cli, "verify_suite", fake_suite)
    assert run(tmp_path, "verify", "[grid]\nn_interior = 8\n[age]\nsteps = 16") == 3
    assert "FAIL normalization_prey" in capsys.readouterr().out
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["passed"] is False and "timings" not in report


def test_parser_requires_config():
    with pytest.raises(SystemExit):
        cli.main(["eigen"])
