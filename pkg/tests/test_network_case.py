import numpy as np
import pytest

from pfmulti.bus import BranchParams, BusKind, BusSpec
from pfmulti.errors import CaseValidationError
from pfmulti.network_case import NetworkCase, build_ybus
from pfmulti.pf_equations import bus_injections

from oracles import straight_ybus


def test_two_bus_ybus(case2):
    ybus = build_ybus(case2)
    assert np.allclose(ybus.g, 0.0)
    assert np.allclose(ybus.b, [[-10, 10], [10, -10]])


def test_case14_matches_straight_assembly(case14):
    assert np.allclose(build_ybus(case14).matrix, straight_ybus(case14),
                       atol=1e-14)


def test_case14_entries(case14):
    ybus = build_ybus(case14)
    i7, i8, i9 = (case14.index_of(b) for b in (7, 8, 9))
    assert ybus.b[i8, i7] == pytest.approx(1 / 0.17615)
    assert ybus.b[i8, i8] == pytest.approx(-1 / 0.17615)
    series = sum(complex(br.series_g, br.series_b)
                 for br in case14.branches_at(9))
    assert ybus.b[i9, i9] - series.imag == pytest.approx(0.19)


def test_symmetric_without_taps(case3):
    matrix = build_ybus(case3).matrix
    assert np.array_equal(matrix, matrix.T)


def test_read_only(case2):
    with pytest.raises(ValueError):
        build_ybus(case2).matrix[0, 0] = 1.0


def test_injections_balance_losses(case14):
    """Sum of injections equals branch losses plus shunt consumption."""
    rng = np.random.default_rng(7)
    ybus = build_ybus(case14)
    for _ in range(20):
        v = rng.uniform(0.8, 1.1, 14) * np.exp(1j * rng.uniform(-0.5, 0.5,
                                                                 14))
        total = bus_injections(ybus, v).sum()
        losses = 0j
        for br in case14.branches:
            vf = v[case14.index_of(br.from_bus)]
            vt = v[case14.index_of(br.to_bus)]
            y = br.series_y
            i_f = br.end_shunt(br.from_bus) * vf - y / br.tap_ratio * vt
            i_t = br.end_shunt(br.to_bus) * vt - y / br.tap_ratio * vf
            losses += vf * np.conj(i_f) + vt * np.conj(i_t)
        for pos, bus in enumerate(case14.buses):
            losses += abs(v[pos]) ** 2 * np.conj(complex(bus.g_shunt,
                                                         bus.b_shunt))
        assert abs(total - losses) < 1e-10


def test_bus_rules():
    with pytest.raises(CaseValidationError):
        BusSpec(1, BusKind.PQ, v_set=1.0)
    with pytest.raises(CaseValidationError):
        BusSpec(2, BusKind.PV, v_set=1.0)
    with pytest.raises(CaseValidationError):
        BusSpec(3, BusKind.SLACK, v_set=1.0)
    with pytest.raises(CaseValidationError):
        BranchParams(1, 1, 0.0, -10.0)
    with pytest.raises(CaseValidationError):
        BranchParams(1, 2, 0.0, 0.0)


def test_duplicate_bus_ids():
    buses = (BusSpec(1, BusKind.SLACK, v_set=1.0, theta_set=0.0),
             BusSpec(1, BusKind.PQ))
    with pytest.raises(CaseValidationError, match="duplicate"):
        NetworkCase(buses, (BranchParams(1, 2, 0.0, -10.0),))


def test_unknown_branch_end():
    buses = (BusSpec(1, BusKind.SLACK, v_set=1.0, theta_set=0.0),
             BusSpec(2, BusKind.PQ))
    with pytest.raises(CaseValidationError, match="unknown bus"):
        NetworkCase(buses, (BranchParams(1, 3, 0.0, -10.0),))


def test_end_shunt_tap_side():
    br = BranchParams(4, 7, 0.0, -4.0, charging_b=0.2, tap_ratio=0.5)
    assert br.end_shunt(4) == pytest.approx(complex(0, -3.9) / 0.25)
    assert br.end_shunt(7) == pytest.approx(complex(0, -3.9))
