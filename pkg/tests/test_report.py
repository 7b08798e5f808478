import json

import numpy as np
import pytest

from pfmulti.errors import CaseParseError
from pfmulti.report import ReportWriter, dump_json, read_solutions

from conftest import table2_solution


def test_table_marks_undefined_angles(case14, table2):
    sols = [table2_solution(case14, table2, i) for i in (0, 1)]
    text = ReportWriter(case14).solutions_table(sols)
    lines = text.splitlines()
    assert lines[0].split() == ["Bus", "|V|_1", "|V|_2", "theta_1",
                                "theta_2"]
    row7 = lines[1 + case14.index_of(7)].split()
    assert row7 == ["7", "0", "0", "-", "-"]
    row4 = lines[1 + case14.index_of(4)].split()
    assert row4[1:3] == ["0.727", "0.7525"]


def test_csv_reads_back_exactly(tmp_path, case14, table2):
    sols = [table2_solution(case14, table2, i) for i in (0, 1)]
    path = tmp_path / "sols.csv"
    path.write_text(ReportWriter(case14, "csv").solutions_csv(sols))
    again = read_solutions(path, case14)
    for a, b in zip(again, sols):
        assert np.array_equal(a.v_mag, b.v_mag)
        assert np.allclose(np.nan_to_num(a.theta), np.nan_to_num(b.theta),
                           rtol=0, atol=1e-15)


def test_published_csv_has_undefined_angles(table2_path, case14):
    first, second = read_solutions(table2_path, case14)
    assert np.isnan(first.angle(8))
    assert first.magnitude(7) == 0.0
    assert second.magnitude(4) == 0.7525


def test_csv_errors_report_line(tmp_path, case2):
    path = tmp_path / "bad.csv"
    path.write_text("bus,vm_1,va_1\n1,1.0,0\n2,abc,0\n")
    with pytest.raises(CaseParseError) as err:
        read_solutions(path, case2)
    assert err.value.line == 3
    path.write_text("node,vm_1,va_1\n")
    with pytest.raises(CaseParseError):
        read_solutions(path, case2)


def test_json_curve_file_reads_solutions(tmp_path, case2):
    doc = {"analyses": [{"curves": [{"solution": {"buses": [
        {"bus": 1, "vm": 1.0, "va_deg": 0.0},
        {"bus": 2, "vm": 0.0, "va_deg": None},
    ]}}]}]}
    path = tmp_path / "curves.json"
    path.write_text(json.dumps(doc))
    (sol,) = read_solutions(path, case2)
    assert sol.magnitude(2) == 0.0


def test_json_syntax_error(tmp_path, case2):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "solutions": [\n    oops\n  ]\n}\n')
    with pytest.raises(CaseParseError) as err:
        read_solutions(path, case2)
    assert err.value.line == 3


def test_dump_json_rejects_nan():
    assert dump_json({"a": 1.5}).endswith("\n")
    with pytest.raises(ValueError):
        dump_json({"a": float("nan")})


def test_unknown_format(case2):
    with pytest.raises(ValueError):
        ReportWriter(case2, "xml")


def test_negative_magnitude_reports_line(tmp_path, case2):
    path = tmp_path / "neg.csv"
    path.write_text("bus,vm_1,va_1\n1,1.0,0\n2,-0.5,0\n")
    with pytest.raises(CaseParseError) as err:
        read_solutions(path, case2)
    assert err.value.line == 3
    assert "magnitude" in str(err.value)


@pytest.mark.parametrize("entry", [
    {"buses": [{"bus": 1, "vm": 1.0, "va_deg": 0.0},
               {"bus": 2, "vm": -0.2, "va_deg": 0.0}]},
    {"buses": [{"bus": 1, "vm": 1.0, "va_deg": 0.0},
               {"bus": 2, "vm": "nan", "va_deg": 0.0}]},
    {"buses": [[1, 1.0, 0.0], [2, 1.0, 0.0]]},
    "not a record",
])
def test_json_bad_entries_are_parse_errors(tmp_path, case2, entry):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"solutions": [entry]}))
    with pytest.raises(CaseParseError) as err:
        read_solutions(path, case2)
    assert "solution 1" in str(err.value)


def test_json_without_solution_list(tmp_path, case2):
    path = tmp_path / "empty.json"
    path.write_text(json.dumps({"analyses": [{"curves": 3}]}))
    with pytest.raises(CaseParseError):
        read_solutions(path, case2)
    path.write_text(json.dumps({"case": "case2"}))
    with pytest.raises(CaseParseError):
        read_solutions(path, case2)


def test_binary_solution_file(tmp_path, case2):
    path = tmp_path / "blob.csv"
    path.write_bytes(b"\xff\xfe\x00bus")
    with pytest.raises(CaseParseError):
        read_solutions(path, case2)
