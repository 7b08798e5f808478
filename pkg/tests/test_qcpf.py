import numpy as np
import pytest

from pfmulti.errors import PreconditionError
from pfmulti.pf_equations import PolarSolution, residuals
from pfmulti.qcpf import (
    BoxBounds,
    ConstraintKind,
    RectState,
    build_qcpf,
    constraint_values,
    default_vmax,
    dump_qcpf,
    eval_violation,
)


def test_case14_shape(case14):
    problem = build_qcpf(case14)
    assert problem.n_state == 28
    assert len(problem.constraints) == 26
    kinds = [con.kind for con in problem.constraints]
    assert kinds.count(ConstraintKind.ACTIVE) == 13
    assert kinds.count(ConstraintKind.REACTIVE) == 9
    assert kinds.count(ConstraintKind.MAGNITUDE) == 4
    assert [con.tag for con in problem.constraints[-4:]] == [
        "V2", "V3", "V6", "V8"]


def test_default_box(case14):
    problem = build_qcpf(case14)
    vmax = default_vmax(case14)
    assert vmax == pytest.approx(1.2 * 1.09)
    assert problem.bounds.lower[0] == problem.bounds.upper[0] == 1.06
    assert problem.bounds.lower[14] == problem.bounds.upper[14] == 0.0
    assert problem.bounds.fixed.sum() == 2
    assert np.all(problem.bounds.upper[1:14] == vmax)


def test_matrices_symmetric(case14):
    for con in build_qcpf(case14).constraints:
        assert np.array_equal(con.z, con.z.T)


def test_rows_match_polar_residuals(case14):
    """Row values are the negated bus mismatches, plus |V|^2 - v_set^2."""
    problem = build_qcpf(case14)
    rng = np.random.default_rng(42)
    pv = case14.pv_buses
    for _ in range(100):
        x = rng.uniform(-1.3, 1.3, 28)
        v = x[:14] + 1j * x[14:]
        sol = PolarSolution(case14.bus_ids, np.abs(v), np.angle(v))
        res = residuals(case14, sol).values
        values = constraint_values(problem, x)
        assert np.allclose(values[:22], -res, atol=1e-10)
        for row, bus in zip(values[22:], pv):
            pos = case14.index_of(bus.id)
            assert row == pytest.approx(abs(v[pos]) ** 2 - bus.v_set ** 2,
                                        abs=1e-10)


def test_violation_zero_at_root(case2_noload):
    problem = build_qcpf(case2_noload)
    report = eval_violation(problem, np.array([1.0, 1.0, 0.0, 0.0]))
    assert report.total == pytest.approx(0.0, abs=1e-12)
    assert report.in_box


def test_violation_is_residual_sum(case2):
    problem = build_qcpf(case2)
    x = np.array([1.0, 0.9, 0.0, -0.05])
    report = eval_violation(problem, x)
    expected = np.abs(residuals(case2, RectState(x).to_polar(case2)).values)
    assert report.total == pytest.approx(expected.sum(), abs=1e-12)


def test_violation_flags_out_of_box(case2):
    problem = build_qcpf(case2, vmax=1.5)
    report = eval_violation(problem, RectState([1.0, 2.0, 0.0, 0.0]))
    assert not report.in_box
    assert report.total > 0


def test_vmax_precondition(case14):
    with pytest.raises(PreconditionError):
        build_qcpf(case14, vmax=1.0)
    with pytest.raises(PreconditionError):
        build_qcpf(case14, vmax=1.09)


def test_rect_state_round_trip_magnitudes(case14):
    state = RectState(np.concatenate([np.full(14, 0.6), np.full(14, 0.8)]))
    assert state.n_bus == 14
    assert np.allclose(state.v_mag, 1.0)
    with pytest.raises(ValueError):
        RectState(np.zeros(5))


def test_box_operations():
    box = BoxBounds(np.array([0.0, -1.0, 2.0]), np.array([1.0, 1.0, 2.0]))
    assert box.max_free_width() == 2.0
    assert box.volume() == 2.0
    low, high = box.split(1, 0.25)
    assert low.upper[1] == high.lower[1] == 0.25
    assert low.volume() + high.volume() == pytest.approx(box.volume())
    other = BoxBounds(np.array([0.5, 0.5, 2.0]), np.array([3.0, 3.0, 2.0]))
    inter = box.intersect(other)
    assert inter is not None
    assert inter.lower.tolist() == [0.5, 0.5, 2.0]
    assert box.intersect(BoxBounds(np.full(3, 5.0), np.full(3, 6.0))) is None
    with pytest.raises(ValueError):
        BoxBounds(np.array([1.0]), np.array([0.0]))


def test_dump_lists_every_row(case2):
    problem = build_qcpf(case2)
    text = dump_qcpf(problem)
    lines = text.splitlines()
    assert lines[0] == "# n_state 4 rows 2"
    assert sum(line.startswith("row ") for line in lines) == 2
    assert "row 0 P2 -0.1" in lines
    for line in lines[1:]:
        if line.startswith("row "):
            continue
        i, j, _ = line.split()
        assert int(i) <= int(j)


def test_collapsed_bus_solves_no_load_case(case2_noload):
    problem = build_qcpf(case2_noload)
    report = eval_violation(problem, np.array([1.0, 0.0, 0.0, 0.0]))
    assert report.total == 0.0
