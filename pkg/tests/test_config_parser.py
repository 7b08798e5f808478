import pytest

from pfmulti.config_parser import ConfigParser, RunConfig
from pfmulti.errors import ConfigError


def write(tmp_path, text):
    path = tmp_path / "config.txt"
    path.write_text(text)
    return str(path)


def test_parse_full_file(tmp_path):
    path = write(tmp_path, "\n".join([
        "# run settings",
        "CASE=case14",
        "MODE=Continuum",
        "",
        "VMAX=1.4",
        "EPS_S=1e-7",
        "BUDGET=500",
        "THETA_SAMPLES=12",
        "FORMAT=JSON",
        "WORKERS=2",
        "OBBT_PASSES=0",
        "LIFT=plain",
        "PENDANT_V=1.06",
        "SOLVER=scs",
        "VERIFY_TOL=5e-4",
    ]))
    config = ConfigParser.build(ConfigParser().parse_config(path))
    assert config.case == "case14"
    assert config.mode == "continuum"
    assert config.vmax == 1.4
    assert config.budget == 500
    assert config.output_format == "json"
    assert config.obbt_passes == 0
    assert not config.bordered
    assert config.pendant_v == 1.06
    assert config.solver == "SCS"
    assert config.verify_tol == 5e-4


def test_defaults():
    config = RunConfig(case="case2", mode="newton")
    assert config.eps_s == 1e-6
    assert config.budget == 20000
    assert config.theta_samples == 24
    assert config.bordered
    assert config.vmax is None


def test_missing_required_keys(tmp_path):
    with pytest.raises(ConfigError, match="MODE"):
        ConfigParser().parse_config(write(tmp_path, "CASE=case14\n"))


def test_unknown_key_reports_line(tmp_path):
    with pytest.raises(ConfigError) as err:
        ConfigParser().parse_config(
            write(tmp_path, "CASE=case14\nMODE=newton\nWIDTH=3\n"))
    assert err.value.line == 3


def test_bad_value_reports_line(tmp_path):
    with pytest.raises(ConfigError) as err:
        ConfigParser().parse_config(
            write(tmp_path, "CASE=case14\nBUDGET=many\nMODE=newton\n"))
    assert err.value.line == 2
    assert "BUDGET" in str(err.value)


def test_syntax_error(tmp_path):
    with pytest.raises(ConfigError, match="invalid syntax"):
        ConfigParser().parse_config(write(tmp_path, "CASE case14\n"))


def test_empty_value_keeps_default(tmp_path):
    values = ConfigParser().parse_config(
        write(tmp_path, "CASE=case14\nMODE=newton\nVMAX=\n"))
    assert "vmax" not in values


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        ConfigParser().parse_config(str(tmp_path / "absent.txt"))


@pytest.mark.parametrize("overrides", [
    {"mode": "solve"},
    {"output_format": "xml"},
    {"lift": "diagonal"},
    {"eps_s": 0.0},
    {"budget": 0},
    {"theta_samples": -1},
    {"workers": 0},
    {"obbt_passes": -1},
    {"vmax": -1.0},
    {"verify_tol": 0.0},
])
def test_invalid_settings(overrides):
    with pytest.raises(ConfigError):
        RunConfig(**{"case": "case14", "mode": "newton", **overrides})


def test_verify_needs_solutions():
    with pytest.raises(ConfigError, match="SOLUTIONS"):
        RunConfig(case="case14", mode="verify")


def test_build_rejects_unknown_and_missing():
    with pytest.raises(ConfigError, match="unknown settings"):
        ConfigParser.build({"case": "case14", "mode": "newton", "x": 1})
    with pytest.raises(ConfigError, match="CASE"):
        ConfigParser.build({"mode": "newton"})
