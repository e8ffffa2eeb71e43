import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from battfd import io
from battfd.errors import ConfigurationError, OCPDomainError
from battfd.params import CellParams, OCPMap, parse_kv


def test_config_round_trip(tmp_path, params):
    path = tmp_path / "cell.cfg"
    params.replace(R_b=0.0071, N=12).save(path)
    loaded = CellParams.load(path)
    assert loaded == params.replace(R_b=0.0071, N=12)


def test_derived_quantities_track_replacements(params):
    p = params.replace(eps_a=0.4)
    assert p.a_a == pytest.approx(3 * 0.4 / p.X)
    assert p.alpha1 < 0 < p.alpha2


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ConfigurationError) as err:
        CellParams.from_config("# header\nR_b = 0.01\nD = fast\n", source="cell.cfg")
    assert err.value.line == 3
    assert "cell.cfg:3" in str(err.value)


@pytest.mark.parametrize("text", ["R_b 0.01", "R_b = 1\nR_b = 2", "bogus = 1", "eps_a = 1.5", "X = -1"])
def test_bad_configs_rejected(text):
    with pytest.raises(ConfigurationError):
        CellParams.from_config(text)


def test_parse_kv_strips_comments():
    assert parse_kv("a = 1  # note\n\n b=2") == {"a": ("1", 1), "b": ("2", 3)}


def test_ocp_csv_loading(tmp_path):
    f = tmp_path / "map.csv"
    f.write_text("# demo\nstoich,volts\n0.0,1.0\n0.5,0.8\n1.0,0.1\n")
    m = OCPMap.from_csv(f)
    assert m.value(0.5) == pytest.approx(0.8)
    with pytest.raises(OCPDomainError):
        m.value(1.2)


def test_ocp_requires_increasing_stoichiometry():
    with pytest.raises(ConfigurationError):
        OCPMap([0.0, 0.5, 0.4], [1, 2, 3])


@given(st.floats(0.0, 1.0))
def test_scalar_and_vector_ocp_paths_agree(s):
    m = OCPMap.builtin("cathode")
    if not m.lo <= s <= m.hi:
        return
    assert m.value(s) == pytest.approx(float(m(s)), abs=1e-12)
    assert m.slope(s) == pytest.approx(float(m.derivative(s)), rel=1e-9, abs=1e-9)


def test_builtin_maps_are_monotone():
    for which, sign in (("anode", 1), ("cathode", -1)):
        m = OCPMap.builtin(which)
        s = np.linspace(m.lo, m.hi, 2001)
        assert np.all(sign * np.diff(m(s)) >= -1e-12)


def test_csv_format_is_lf_and_round_trips(tmp_path):
    text = io.format_csv(["t", "x", "flag"], [np.arange(3.0), np.array([0.1, 1 / 3, -2e-9]), np.array([True, False, True])])
    assert "\r" not in text
    path = tmp_path / "x.csv"
    io.atomic_write_text(path, text)
    header, data = io.read_csv(path)
    assert header == ["t", "x", "flag"]
    assert data[1, 1] == 1 / 3
    np.testing.assert_array_equal(data[:, 2], [1, 0, 1])


def test_json_is_canonical():
    a = io.dumps({"b": np.float64(1.5), "a": [np.int64(2), np.bool_(True)]})
    assert a == io.dumps({"a": [2, True], "b": 1.5})
    assert a.endswith("\n")
