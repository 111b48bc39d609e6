import io

import pytest

from curl_equilib.constants import CSV_HEADER
from curl_equilib.exceptions import InvalidArgumentError
from curl_equilib.helpers import (
    coerce_value, parse_bool, parse_int_list, parse_key_value_file, read_csv, write_csv,
)
from curl_equilib.models import ExperimentConfig, StudyRow


def test_parse_int_list():
    assert parse_int_list("1,2, 4") == [1, 2, 4]
    assert parse_int_list("1;2") == [1, 2]
    assert parse_int_list((3, "5")) == [3, 5]
    with pytest.raises(InvalidArgumentError):
        parse_int_list("1,two")


@pytest.mark.parametrize("raw,expected", [("yes", True), ("On", True), ("0", False), ("false", False), (True, True)])
def test_parse_bool(raw, expected):
    assert parse_bool(raw) is expected


def test_parse_bool_rejects_other_words():
    with pytest.raises(InvalidArgumentError):
        parse_bool("maybe")


def test_coerce_value():
    assert coerce_value("SERIES_TERMS", "60") == 60
    assert coerce_value("doerfler_theta", "0.3") == pytest.approx(0.3)
    assert coerce_value("case", " sine ") == "sine"
    with pytest.raises(InvalidArgumentError):
        coerce_value("series_terms", "many")
    with pytest.raises(InvalidArgumentError):
        coerce_value("colour", "red")


def test_key_value_file():
    handle = io.StringIO("# study setup\ncase = sine\nmesh_n = 1, 2  # two meshes\n\nverify = yes\n")
    assert parse_key_value_file(handle) == {"CASE": "sine", "MESH_N": [1, 2], "VERIFY": True}


def test_key_value_file_reports_line():
    with pytest.raises(InvalidArgumentError, match="line 2"):
        parse_key_value_file(io.StringIO("case = sine\ndegrees 1\n"))


def test_csv_round_trip(tmp_path):
    row = StudyRow(case="sine", p=1, N=2, h=0.4330127, dofs=604, err=0.5, eta=0.55, eta_osc=0.0,
                   eff=1.1, equil_res=1e-14, seconds=0.25)
    path = tmp_path / "rows.csv"
    write_csv([row], str(path))
    assert path.read_text(encoding="ascii").splitlines()[0] == ",".join(CSV_HEADER)
    (loaded,) = read_csv(str(path))
    assert loaded["case"] == "sine"
    assert int(loaded["dofs"]) == 604
    assert float(loaded["eff"]) == pytest.approx(1.1)


def test_experiment_config_from_mapping():
    config = ExperimentConfig.from_mapping({"CASE": "lshape", "MESH_N": [2], "UNRELATED": 1})
    assert config.case == "lshape"
    assert config.mesh_n == [2]
    config.validate()


@pytest.mark.parametrize("changes", [{"case": "cube"}, {"study": "adaptive"}, {"degrees": []},
                                     {"mesh_n": []}, {"doerfler_theta": 2.0}, {"series_terms": 0}])
def test_experiment_config_validation(changes):
    config = ExperimentConfig(**changes)
    with pytest.raises(InvalidArgumentError):
        config.validate()
