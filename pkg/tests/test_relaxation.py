import numpy as np
import pytest

from pfmulti.qcpf import BoxBounds, build_qcpf, eval_violation
from pfmulti.relaxation import (
    EPS_S,
    RelaxationResult,
    RltEnvelope,
    SolverStatus,
    build_relaxation,
    dump_standard_form,
    obbt_tighten,
    solve_relaxation,
)


def test_envelope_holds_for_rank_one_points():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 6))
        a = rng.uniform(-2, 2, n)
        b = rng.uniform(-2, 2, n)
        lower, upper = np.minimum(a, b), np.maximum(a, b)
        x = rng.uniform(lower, upper)
        envelope = RltEnvelope(lower, upper)
        assert envelope.satisfied(x, np.outer(x, x), tol=1e-12)


def test_scalar_envelope_interval():
    """On [-1, 1] at x = 0.5 the envelope admits X in [0, 1]."""
    envelope = RltEnvelope(np.array([-1.0]), np.array([1.0]))
    x = np.array([0.5])
    assert envelope.satisfied(x, np.array([[0.0]]))
    assert envelope.satisfied(x, np.array([[1.0]]))
    assert envelope.satisfied(x, np.array([[0.25]]))
    assert not envelope.satisfied(x, np.array([[-0.01]]))
    assert not envelope.satisfied(x, np.array([[1.01]]))


def test_envelope_exact_at_corner():
    lower = np.array([-1.0, 0.5, -0.3])
    upper = np.array([2.0, 1.5, 0.7])
    envelope = RltEnvelope(lower, upper)
    for x in (lower, upper):
        exact = np.outer(x, x)
        assert envelope.satisfied(x, exact)
        for i in range(3):
            for j in range(i, 3):
                for delta in (-1e-6, 1e-6):
                    moved = exact.copy()
                    moved[i, j] += delta
                    moved[j, i] = moved[i, j]
                    assert not envelope.satisfied(x, moved)


def test_envelope_pins_fixed_coordinate():
    envelope = RltEnvelope(np.array([1.0, -1.0]), np.array([1.0, 1.0]))
    x = np.array([1.0, 0.3])
    x_mat = np.array([[1.0, 0.3], [0.3, 0.5]])
    assert envelope.satisfied(x, x_mat)
    x_mat[0, 1] = x_mat[1, 0] = 0.31
    assert not envelope.satisfied(x, x_mat)


def test_row_count():
    box = BoxBounds(np.full(28, -1.0), np.full(28, 1.0))
    assert RltEnvelope.from_box(box).row_count == 28 * 29 + 28 * 28


def test_result_diagnostics():
    x = np.array([0.6, 0.8])
    result = RelaxationResult(x, np.outer(x, x) + np.diag([0.1, 0.0]), 0.0,
                              0.0, x, SolverStatus.OPTIMAL, np.zeros(2))
    assert result.usable
    assert np.allclose(result.diagonal_gap(), [0.1, 0.0])
    assert result.rank_one()
    failed = RelaxationResult(x, np.eye(2), np.inf, np.inf, x,
                              SolverStatus.INACCURATE, np.zeros(2))
    assert not failed.usable
    assert not failed.infeasible


@pytest.fixture
def case2_program(case2):
    problem = build_qcpf(case2)
    return problem, build_relaxation(problem, problem.bounds)


def test_program_sizes(case2_program):
    problem, program = case2_program
    assert program.n_state == 4
    assert program.n_equality == 2
    assert program.psd_dim == 5
    assert program.n_rlt == 4 * 5 + 16
    text = dump_standard_form(program)
    assert text.startswith("# relaxation n_state 4 equality_rows 2")
    assert "cone psd order 5 bordered" in text
    assert text.count("\nbox ") == 4


def test_set_box_rejects_wrong_dimension(case2_program):
    _, program = case2_program
    with pytest.raises(ValueError):
        program.set_box(BoxBounds(np.zeros(3), np.ones(3)))


@pytest.mark.slow
def test_zero_bound_when_roots_exist(case2_program):
    _, program = case2_program
    result = solve_relaxation(program)
    assert result.usable
    assert result.s_cvx <= EPS_S
    assert program.solve_count == 1
    # slack bus coordinates stay at their setpoint
    assert result.x_opt[0] == pytest.approx(1.0, abs=1e-6)
    assert result.x_opt[2] == pytest.approx(0.0, abs=1e-6)


@pytest.mark.slow
def test_bound_over_root_free_box(case2_program):
    """e2 in [0.3, 0.7] caps the reactive balance 2.0 short of its target."""
    problem, program = case2_program
    lower = problem.bounds.lower.copy()
    upper = problem.bounds.upper.copy()
    lower[1], upper[1] = 0.3, 0.7
    lower[3], upper[3] = -0.1, 0.1
    program.set_box(BoxBounds(lower, upper))
    result = program.solve()
    assert result.usable
    assert result.s_cvx >= 1.9


@pytest.mark.slow
def test_plain_lift_is_sound(case2):
    problem = build_qcpf(case2)
    program = build_relaxation(problem, problem.bounds, bordered=False)
    assert program.psd_dim == 4
    assert program.solve().s_cvx <= EPS_S


@pytest.mark.slow
def test_bound_monotone_under_subdivision(case2_program):
    problem, program = case2_program
    parent = program.solve().s_cvx
    boxes = [problem.bounds]
    for index in (1, 3, 1):
        boxes = [half for box in boxes
                 for half in box.split(index, float(
                     (box.lower[index] + box.upper[index]) / 2))]
    for box in boxes:
        program.set_box(box)
        result = program.solve()
        if result.usable:
            assert result.s_cvx >= parent - 1e-7


@pytest.mark.slow
def test_obbt_shrinks_and_keeps_roots(case2_program):
    problem, program = case2_program
    tightened = obbt_tighten(program, problem.bounds)
    assert np.all(tightened.lower >= problem.bounds.lower)
    assert np.all(tightened.upper <= problem.bounds.upper)
    # the active balance fixes f2 = -0.01
    assert tightened.width[3] < 1e-3
    roots = [np.array([1.0, e2, 0.0, -0.01])
             for e2 in ((1 + np.sqrt(1 - 4e-4)) / 2,
                        (1 - np.sqrt(1 - 4e-4)) / 2)]
    for root in roots:
        assert tightened.contains(root, tol=1e-6)
    assert tightened.upper[1] < 1.01


@pytest.mark.slow
@pytest.mark.parametrize("name", ["case2", "case3"])
def test_bound_below_sampled_violation(name, request):
    """The relaxation bound never exceeds S at a rank-1 point of the box."""
    case = request.getfixturevalue(name)
    problem = build_qcpf(case)
    program = build_relaxation(problem, problem.bounds)
    rng = np.random.default_rng(17)
    fixed = problem.bounds.fixed
    for _ in range(25):
        a = rng.uniform(problem.bounds.lower, problem.bounds.upper)
        b = rng.uniform(problem.bounds.lower, problem.bounds.upper)
        lower = np.where(fixed, problem.bounds.lower, np.minimum(a, b))
        upper = np.where(fixed, problem.bounds.upper, np.maximum(a, b))
        box = BoxBounds(lower, upper)
        program.set_box(box)
        result = program.solve()
        if not result.usable:
            continue
        for _ in range(5):
            x = rng.uniform(lower, upper)
            assert result.s_cvx <= eval_violation(problem, x).total + 1e-7
