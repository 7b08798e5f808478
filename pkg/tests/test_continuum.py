import json
import math
from dataclasses import replace

import numpy as np
import pytest

from pfmulti.bus import BranchParams, BusKind, BusSpec
from pfmulti.continuum import (
    CURVE_TOL,
    ContinuumPattern,
    OperatingLimits,
    ViolationKind,
    analyse_pattern,
    build_curves,
    decompose,
    detect_patterns,
    limits_from_case,
    practicality_filter,
)
from pfmulti.enumerator import EnumerationConfig
from pfmulti.errors import CurveAssemblyError
from pfmulti.network_case import NetworkCase
from pfmulti.pf_equations import (
    PolarSolution,
    branch_flows,
    flat_start,
    newton_refine,
    residuals,
)
from pfmulti.report import ReportWriter

from conftest import table2_solution, twin_pendant_case


@pytest.fixture(scope="module")
def split14(case14):
    return decompose(case14, detect_patterns(case14)[0])


@pytest.fixture(scope="module")
def s2_roots(split14, table2):
    """Newton roots of S2 started from both published solutions."""
    roots = []
    for index in (0, 1):
        guess = table2_solution(split14.s2, table2, index)
        result = newton_refine(split14.s2, guess.rectangular())
        assert result.converged
        roots.append(result.solution)
    return roots


def chain_case() -> NetworkCase:
    """Slack - load - zero bus - pendant generator."""
    buses = (
        BusSpec(1, BusKind.SLACK, v_set=1.0, theta_set=0.0),
        BusSpec(2, BusKind.PQ, p_load=0.3, q_load=0.1),
        BusSpec(3, BusKind.PQ),
        BusSpec(4, BusKind.PV, v_set=1.02, p_gen=0.0),
    )
    branches = (
        BranchParams(1, 2, 1.0, -8.0, charging_b=0.02),
        BranchParams(2, 3, 0.0, -5.0),
        BranchParams(3, 4, 0.0, -4.0),
    )
    return NetworkCase(buses, branches, 100.0, "chain")


def test_detect_case14(case14):
    patterns = detect_patterns(case14)
    assert len(patterns) == 1
    pattern = patterns[0]
    assert (pattern.zero_bus, pattern.pendant_bus) == (7, 8)
    assert pattern.q_pendant == pytest.approx(6.7448, abs=1e-4)
    assert pattern.pendant_v == pytest.approx(1.09)
    assert pattern.bridge.touches(7) and pattern.bridge.touches(8)


def test_no_pattern_with_load_at_zero_bus(case14):
    buses = tuple(replace(b, p_load=0.05) if b.id == 7 else b
                  for b in case14.buses)
    loaded = NetworkCase(buses, case14.branches, case14.base_mva)
    assert detect_patterns(loaded) == []


def test_no_pattern_with_generation_at_pendant(case14):
    buses = tuple(replace(b, p_gen=0.1) if b.id == 8 else b
                  for b in case14.buses)
    assert detect_patterns(NetworkCase(buses, case14.branches)) == []


def test_no_pattern_in_small_cases(case2, case3):
    assert detect_patterns(case2) == []
    assert detect_patterns(case3) == []


def test_decomposition_shapes(case14, split14):
    s2 = split14.s2
    assert s2.n_bus == 12
    assert 7 not in s2.bus_ids and 8 not in s2.bus_ids
    assert s2.name == "case14-s2"
    assert sorted(split14.added_shunts) == [4, 9]
    assert split14.added_shunts[9] == pytest.approx(complex(0, -1 / 0.11001))
    assert split14.added_shunts[4].imag == pytest.approx(
        -1 / 0.20912 / 0.978 ** 2)
    # the input case is untouched
    assert case14.bus(4).b_shunt == 0.0
    assert case14.n_bus == 14
    assert split14.s1[:2] == (7, 8)


def test_decomposition_preserves_residuals(case14, split14):
    """S2 mismatches equal the full mismatches with the zero bus grounded."""
    s2 = split14.s2
    rng = np.random.default_rng(9)
    for _ in range(20):
        v_mag = rng.uniform(0.3, 1.1, s2.n_bus)
        theta = rng.uniform(-1.0, 1.0, s2.n_bus)
        v_mag[s2.index_of(1)], theta[s2.index_of(1)] = 1.06, 0.0
        part = PolarSolution(s2.bus_ids, v_mag, theta)
        full_mag = np.zeros(14)
        full_theta = np.zeros(14)
        for bus_id, m, t in zip(s2.bus_ids, v_mag, theta):
            full_mag[case14.index_of(bus_id)] = m
            full_theta[case14.index_of(bus_id)] = t
        full_mag[case14.index_of(8)] = 1.09
        full_theta[case14.index_of(8)] = rng.uniform(-np.pi, np.pi)
        whole = residuals(case14, PolarSolution(case14.bus_ids, full_mag,
                                                full_theta))
        reduced = residuals(s2, part)
        by_label = dict(zip(whole.labels, whole.values))
        for label, value in zip(reduced.labels, reduced.values):
            assert by_label[label] == pytest.approx(value, abs=1e-12)
        assert by_label[("P", 8)] == pytest.approx(0.0, abs=1e-12)
        assert by_label[("P", 7)] == 0.0
        assert by_label[("Q", 7)] == 0.0


def test_curves_reproduce_published_table(case14, split14, s2_roots, table2):
    curves = build_curves(case14, split14.pattern, s2_roots,
                          pendant_v=1.06)
    assert len(curves) == 2
    for index, curve in enumerate(curves):
        sol = curve.assemble(0.0)
        for bus_id in case14.bus_ids:
            vm, va = table2[bus_id][index]
            assert sol.magnitude(bus_id) == pytest.approx(vm, abs=1e-3)
            if va is not None and bus_id != 8:
                assert math.degrees(sol.angle(bus_id)) == pytest.approx(
                    va, abs=0.05)
        assert math.isnan(sol.angle(7))


def test_curves_ordered_by_magnitude_sum(case14, split14, s2_roots):
    curves = build_curves(case14, split14.pattern, list(reversed(s2_roots)))
    sums = [float(np.sum(c.s2_solution.v_mag)) for c in curves]
    assert sums == sorted(sums)


def test_full_turn_sweep(case14, split14, s2_roots):
    curves = build_curves(case14, split14.pattern, s2_roots,
                          theta_samples=8)
    bridge_index = case14.branches.index(split14.pattern.bridge)
    for curve in curves:
        assert curve.max_residual < 1e-8
        assert curve.q_pendant == pytest.approx(6.7448, abs=1e-4)
        for theta in np.linspace(-np.pi, np.pi, 360, endpoint=False):
            sol = curve.assemble(float(theta))
            assert residuals(case14, sol).norm < 1e-8
            assert sol.magnitude(8) == pytest.approx(1.09)
            flows = [f for f in branch_flows(case14, sol)
                     if f.branch_index == bridge_index]
            assert all(f.p_flow == pytest.approx(0.0, abs=1e-12)
                       for f in flows)
            assert sol.q_gen[8] == pytest.approx(6.7448, abs=1e-4)


def test_pendant_override_changes_reactive_output(case14, split14,
                                                  s2_roots):
    curve = build_curves(case14, split14.pattern, s2_roots[:1],
                         pendant_v=1.06)[0]
    assert curve.q_pendant == pytest.approx(1.06 ** 2 / 0.17615)
    assert curve.assemble(0.5).magnitude(8) == pytest.approx(1.06)


def test_non_root_rejected(case14, split14, table2):
    rough = table2_solution(split14.s2, table2, 0)
    with pytest.raises(CurveAssemblyError) as err:
        build_curves(case14, split14.pattern, [rough])
    assert err.value.residual >= 1e-8


def test_theta_samples_positive(case14, split14, s2_roots):
    with pytest.raises(ValueError):
        build_curves(case14, split14.pattern, s2_roots, theta_samples=0)


def test_chain_with_two_neighbour_zero_bus():
    case = chain_case()
    patterns = detect_patterns(case)
    assert [(p.zero_bus, p.pendant_bus) for p in patterns] == [(3, 4)]
    split = decompose(case, patterns[0])
    assert split.s2.bus_ids == (1, 2)
    assert split.added_shunts == {2: complex(0, -5.0)}
    root = newton_refine(split.s2, flat_start(split.s2))
    assert root.converged
    curve = build_curves(case, patterns[0], [root.solution],
                         theta_samples=90)[0]
    assert curve.max_residual < 1e-8
    assert curve.q_pendant == pytest.approx(1.02 ** 2 * 4.0)


QUICK = EnumerationConfig(budget=4, obbt_passes=0)


@pytest.fixture(scope="module")
def chain_analysis():
    case = chain_case()
    return analyse_pattern(case, detect_patterns(case)[0], config=QUICK)


def test_search_feeds_curve_assembly(chain_analysis):
    analysis = chain_analysis
    assert analysis.pattern.zero_bus == 3
    assert len(analysis.search.isolated) >= 1
    assert len(analysis.curves) == len(analysis.search.isolated)
    assert len(analysis.annotations) == len(analysis.curves)
    for curve in analysis.curves:
        assert curve.max_residual < CURVE_TOL
        assert curve.q_pendant == pytest.approx(1.02 ** 2 * 4.0)
        assert curve.s2_solution.bus_ids == (1, 2)
    magnitudes = {round(c.s2_solution.magnitude(2), 8)
                  for c in analysis.curves}
    assert magnitudes == {round(r.solution.magnitude(2), 8)
                          for r in analysis.search.isolated}


def test_curve_report_sections(chain_analysis):
    case = chain_case()
    data = json.loads(ReportWriter(case, "json").continuum([chain_analysis]))
    assert data["complete"] == chain_analysis.complete
    (record,) = data["analyses"]
    assert record["pattern"]["zero_bus"] == 3
    assert record["pattern"]["bridge"] == [3, 4]
    assert len(record["curves"]) == len(chain_analysis.curves)
    text = ReportWriter(case).continuum([chain_analysis])
    assert text.startswith("pattern: zero bus 3, pendant bus 4\n")
    assert f"{len(chain_analysis.curves)} solution curve(s)" in text


def test_two_patterns_detected():
    case = twin_pendant_case()
    patterns = detect_patterns(case)
    assert [(p.zero_bus, p.pendant_bus) for p in patterns] == [(3, 4),
                                                               (5, 6)]
    for pattern in patterns:
        split = decompose(case, pattern)
        assert pattern.zero_bus not in split.s2.bus_ids
        assert split.s2.n_bus == 4
    assert patterns[1].q_pendant == pytest.approx(1.01 ** 2 * 3.0)


def test_renumbering_invariance(case14):
    mapping = {b: 100 - b for b in case14.bus_ids}
    buses = tuple(replace(b, id=mapping[b.id]) for b in case14.buses)
    branches = tuple(replace(br, from_bus=mapping[br.from_bus],
                             to_bus=mapping[br.to_bus])
                     for br in case14.branches)
    renamed = NetworkCase(buses, branches, case14.base_mva)
    (pattern,) = detect_patterns(renamed)
    (original,) = detect_patterns(case14)
    assert (pattern.zero_bus, pattern.pendant_bus) == (93, 92)
    assert pattern.q_pendant == original.q_pendant


def test_practicality_of_published_curve(case14, split14, s2_roots):
    curve = build_curves(case14, split14.pattern, s2_roots)[0]
    annotation = practicality_filter(case14, curve, limits_from_case(case14))
    assert not annotation.practical
    assert ViolationKind.Q_LIMIT in annotation.kinds
    assert 8 in annotation.buses(ViolationKind.Q_LIMIT)
    low_buses = {4, 5, 7, 9, 10, 11, 13, 14}
    v_buses = set(annotation.buses(ViolationKind.V_LIMIT))
    assert low_buses | {6} <= v_buses
    assert ViolationKind.ZERO_BUS_LOAD not in annotation.kinds
    assert ViolationKind.FLOW_LIMIT in annotation.unchecked


def test_practicality_without_limits(case14, split14, s2_roots):
    curve = build_curves(case14, split14.pattern, s2_roots)[0]
    annotation = practicality_filter(case14, curve, None)
    assert annotation.practical
    assert "unchecked: all" in annotation.describe()


def test_load_at_grounded_bus_flagged(case2):
    sol = PolarSolution(case2.bus_ids, np.array([1.0, 0.0]), np.zeros(2))
    annotation = practicality_filter(case2, sol, OperatingLimits())
    assert annotation.buses(ViolationKind.ZERO_BUS_LOAD) == [2]


def test_flow_rating_checked(case2):
    sol = PolarSolution(case2.bus_ids, np.array([1.0, 0.95]),
                        np.array([0.0, -0.2]))
    limits = OperatingLimits(rating={0: 0.5})
    annotation = practicality_filter(case2, sol, limits)
    assert annotation.buses(ViolationKind.FLOW_LIMIT) == [0]
    assert ViolationKind.V_LIMIT in annotation.unchecked


def test_pattern_record_is_frozen(case14):
    pattern = detect_patterns(case14)[0]
    assert isinstance(pattern, ContinuumPattern)
    with pytest.raises(AttributeError):
        pattern.zero_bus = 3
