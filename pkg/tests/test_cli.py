import math

import pytest

from curl_equilib.algorithms import mesh_core
from curl_equilib.blueprints import experiments
from curl_equilib.exceptions import PostCheckError
from curl_equilib.helpers import read_csv
from curl_equilib.models import StudyRow


@pytest.fixture
def captured(monkeypatch):
    """Replace the study runner by a stub recording the config it receives"""
    seen = []

    def fake(config):
        seen.append(config)
        return [StudyRow(case=config.case, p=1, N=1, h=0.866, dofs=18, err=0.1, eta=0.11, eta_osc=0.0,
                         eff=1.1, equil_res=1e-15, seconds=0.0)]

    monkeypatch.setattr(experiments.ExperimentService, "run", staticmethod(fake))
    return seen


def test_rates_command(runner, tmp_path):
    path = tmp_path / "study.csv"
    path.write_text("case,p,N,h,err\nsine,1,1,1.0,1.0\nsine,1,2,0.5,0.25\n", encoding="ascii")
    result = runner.invoke(args=["rates", str(path)])
    assert result.exit_code == 0
    assert result.output.splitlines() == ["case,p,N,rate", "sine,1,2,2.0000"]


def test_check_mesh_command(runner, cube1, tmp_path):
    path = tmp_path / "cube.mesh"
    mesh_core.save_mesh(cube1, path)
    result = runner.invoke(args=["check-mesh", str(path)])
    assert result.exit_code == 0
    assert "tetrahedra 24" in result.output
    assert "geometry violators 0" in result.output


def test_check_mesh_reports_format_error(runner, tmp_path):
    path = tmp_path / "bad.mesh"
    path.write_text("not a mesh\n", encoding="ascii")
    result = runner.invoke(args=["check-mesh", str(path)])
    assert result.exit_code == 1
    assert "bad header" in result.output


def test_run_writes_csv(runner, app, captured):
    result = runner.invoke(args=["run", "--case", "sine", "--mesh-n", "1"])
    assert result.exit_code == 0
    (config,) = captured
    assert config.case == "sine"
    assert config.mesh_n == [1]
    (row,) = read_csv(app.config["OUT"])
    assert row["case"] == "sine"


def test_run_const_j_end_to_end(runner, app):
    result = runner.invoke(args=["run", "--case", "const_j", "--mesh-n", "1", "--degrees", "1", "--no-timing"])
    assert result.exit_code == 0, result.output
    (row,) = read_csv(app.config["OUT"])
    assert (row["case"], row["p"], row["N"]) == ("const_j", "1", "1")
    assert float(row["h"]) == pytest.approx(math.sqrt(3.0) / 2.0, rel=1e-6)
    assert float(row["seconds"]) == 0.0
    assert float(row["eff"]) >= 1.0
    assert float(row["equil_res"]) <= 1e-9


def test_flags_override_config_file(runner, captured, tmp_path):
    config_file = tmp_path / "study.cfg"
    config_file.write_text("case = lshape\ndegrees = 1, 2\nverify = yes\n", encoding="ascii")
    result = runner.invoke(args=["run", "--config", str(config_file), "--degrees", "3"])
    assert result.exit_code == 0
    (config,) = captured
    assert config.case == "lshape"
    assert config.degrees == [3]
    assert config.verify is True


def test_post_check_failure_exit_code(runner, monkeypatch):
    def fail(config):
        raise PostCheckError("post-check equilibration failed")

    monkeypatch.setattr(experiments.ExperimentService, "run", staticmethod(fail))
    result = runner.invoke(args=["run", "--case", "const_j"])
    assert result.exit_code == 2


def test_unknown_case_exit_code(runner):
    result = runner.invoke(args=["run", "--case", "bogus"])
    assert result.exit_code == 1
    assert "unknown case" in result.output
