"""Rectangular quadratically constrained power-flow program.

The state is x = [e_1..e_N, f_1..f_N]. Every power-flow equation becomes
tr(x x^T Z_k) = c_k with a symmetric Z_k and no linear term, because bus
injections are homogeneous quadratics of the rectangular voltages. The
slack bus is fixed through equal lower and upper bounds.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import sparse

from pfmulti.bus import BusKind
from pfmulti.errors import PreconditionError
from pfmulti.network_case import NetworkCase, build_ybus
from pfmulti.pf_equations import PolarSolution, solution_from_rect

logger = logging.getLogger(__name__)

VMAX_FACTOR = 1.2


class ConstraintKind(Enum):
    """Which power-flow equation a quadratic row encodes."""
    ACTIVE = "P"
    REACTIVE = "Q"
    MAGNITUDE = "V"


@dataclass(frozen=True)
class RectState:
    """Stacked rectangular voltages [e; f] in p.u."""

    x: np.ndarray

    def __post_init__(self) -> None:
        """Copy and freeze the vector."""
        x = np.array(self.x, dtype=float)
        if x.ndim != 1 or x.size % 2:
            raise ValueError("rectangular state must have length 2N")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    @property
    def n_bus(self) -> int:
        """Number of buses N."""
        return self.x.size // 2

    @property
    def e(self) -> np.ndarray:
        """Real parts."""
        return self.x[:self.n_bus]

    @property
    def f(self) -> np.ndarray:
        """Imaginary parts."""
        return self.x[self.n_bus:]

    @property
    def v_mag(self) -> np.ndarray:
        """Magnitudes sqrt(e^2 + f^2)."""
        return np.asarray(np.hypot(self.e, self.f))

    @classmethod
    def from_polar(cls, sol: PolarSolution) -> "RectState":
        """Rectangular image of a polar solution."""
        return cls(sol.rectangular())

    def to_polar(self, case: NetworkCase) -> PolarSolution:
        """Polar view with recovered generator outputs."""
        return solution_from_rect(case, self.x)


@dataclass(frozen=True)
class QuadraticConstraint:
    """One row tr(X Z) = c of the program."""

    z: np.ndarray
    c: float
    kind: ConstraintKind
    bus_id: int

    def __post_init__(self) -> None:
        """Freeze the matrix and check symmetry."""
        z = np.array(self.z, dtype=float)
        if not np.array_equal(z, z.T):
            raise ValueError("constraint matrix must be symmetric")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    @property
    def tag(self) -> str:
        """Short label such as `P4` or `V8`."""
        return f"{self.kind.value}{self.bus_id}"

    def value(self, x: np.ndarray) -> float:
        """Evaluate tr(x x^T Z) = x^T Z x."""
        return float(x @ self.z @ x)


@dataclass(frozen=True)
class BoxBounds:
    """Interval vector x^l <= x <= x^u."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        """Copy, freeze and check consistency."""
        lower = np.array(self.lower, dtype=float)
        upper = np.array(self.upper, dtype=float)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("bounds must be vectors of equal length")
        if np.any(lower > upper):
            raise ValueError("lower bound exceeds upper bound")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def size(self) -> int:
        """Number of coordinates."""
        return int(self.lower.size)

    @property
    def width(self) -> np.ndarray:
        """Per-coordinate widths."""
        return np.asarray(self.upper - self.lower)

    @property
    def fixed(self) -> np.ndarray:
        """Mask of pinned coordinates (lower == upper)."""
        return np.asarray(self.lower == self.upper)

    def max_free_width(self) -> float:
        """Largest width over non-pinned coordinates."""
        free = ~self.fixed
        return float(self.width[free].max()) if free.any() else 0.0

    def volume(self) -> float:
        """Product of widths over non-pinned coordinates."""
        return float(np.prod(self.width[~self.fixed]))

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        """Check membership with an optional tolerance."""
        return bool(np.all(x >= self.lower - tol)
                    and np.all(x <= self.upper + tol))

    def intersect(self, other: "BoxBounds") -> "BoxBounds | None":
        """Intersection, or None when empty."""
        lower = np.maximum(self.lower, other.lower)
        upper = np.minimum(self.upper, other.upper)
        if np.any(lower > upper):
            return None
        return BoxBounds(lower, upper)

    def split(self, index: int, point: float
              ) -> tuple["BoxBounds", "BoxBounds"]:
        """Cut the box in two at `point` along one coordinate.

        Args:
            index: Coordinate to cut.
            point: Cut position, inside the interval.

        Returns:
            The lower and upper halves, sharing the face at `point`.
        """
        upper = self.upper.copy()
        upper[index] = point
        lower = self.lower.copy()
        lower[index] = point
        return BoxBounds(self.lower, upper), BoxBounds(lower, self.upper)


@dataclass(frozen=True)
class QcpfProblem:
    """The quadratic program of a case: rows, initial box and size."""

    case: NetworkCase
    constraints: tuple[QuadraticConstraint, ...]
    bounds: BoxBounds
    n_state: int = field(init=False)

    def __post_init__(self) -> None:
        """Derive the state dimension."""
        object.__setattr__(self, "n_state", 2 * self.case.n_bus)

    def z_stack(self) -> np.ndarray:
        """All Z_k stacked into an array of shape (m, n, n)."""
        return np.stack([con.z for con in self.constraints])

    def c_vector(self) -> np.ndarray:
        """All c_k as a vector."""
        return np.array([con.c for con in self.constraints])


def default_vmax(case: NetworkCase) -> float:
    """Initial magnitude cap: 1.2 x max(setpoints, 1.0)."""
    setpoints = [b.v_set for b in case.buses if b.v_set is not None]
    return VMAX_FACTOR * max(setpoints + [1.0])


def _injection_forms(g_row: np.ndarray, b_row: np.ndarray, pos: int,
                     n: int) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric quadratic forms of the active and reactive injection.

    Args:
        g_row: Row `pos` of G.
        b_row: Row `pos` of B.
        pos: Bus position.
        n: Number of buses.

    Returns:
        (Z_P, Z_Q) such that P = x^T Z_P x and Q = x^T Z_Q x.
    """
    h_p = np.zeros((2 * n, 2 * n))
    h_p[pos, :n] = g_row
    h_p[pos, n:] = -b_row
    h_p[n + pos, :n] = b_row
    h_p[n + pos, n:] = g_row

    h_q = np.zeros((2 * n, 2 * n))
    h_q[n + pos, :n] = g_row
    h_q[n + pos, n:] = -b_row
    h_q[pos, :n] = -b_row
    h_q[pos, n:] = -g_row
    return (h_p + h_p.T) / 2, (h_q + h_q.T) / 2


def build_qcpf(case: NetworkCase, vmax: float | None = None) -> QcpfProblem:
    """Build the quadratic program of a case.

    Args:
        case: Network case.
        vmax: Magnitude cap of the initial box; `default_vmax` when None.

    Returns:
        Rows ordered active (PV and PQ), reactive (PQ), magnitude (PV),
        each in bus order, and the initial box with the slack pinned.

    Raises:
        PreconditionError: If vmax does not exceed every setpoint.
    """
    if vmax is None:
        vmax = default_vmax(case)
    setpoints = [b.v_set for b in case.buses if b.v_set is not None]
    if vmax <= 0 or vmax <= max(setpoints):
        raise PreconditionError(
            f"vmax={vmax} must exceed every voltage setpoint "
            f"(max {max(setpoints)})"
        )

    n = case.n_bus
    ybus = build_ybus(case)
    g, b = ybus.g, ybus.b

    active: list[QuadraticConstraint] = []
    reactive: list[QuadraticConstraint] = []
    magnitude: list[QuadraticConstraint] = []
    for pos, bus in enumerate(case.buses):
        if bus.kind is BusKind.SLACK:
            continue
        z_p, z_q = _injection_forms(g[pos], b[pos], pos, n)
        active.append(QuadraticConstraint(
            z_p, bus.p_injection, ConstraintKind.ACTIVE, bus.id))
        if bus.kind is BusKind.PQ:
            reactive.append(QuadraticConstraint(
                z_q, -bus.q_load, ConstraintKind.REACTIVE, bus.id))
        else:
            z_v = np.zeros((2 * n, 2 * n))
            z_v[pos, pos] = 1.0
            z_v[n + pos, n + pos] = 1.0
            assert bus.v_set is not None
            magnitude.append(QuadraticConstraint(
                z_v, bus.v_set ** 2, ConstraintKind.MAGNITUDE, bus.id))

    lower = np.full(2 * n, -vmax)
    upper = np.full(2 * n, vmax)
    slack = case.slack
    s_pos = case.index_of(slack.id)
    assert slack.v_set is not None and slack.theta_set is not None
    e_s = slack.v_set * np.cos(slack.theta_set)
    f_s = slack.v_set * np.sin(slack.theta_set)
    lower[s_pos] = upper[s_pos] = e_s
    lower[n + s_pos] = upper[n + s_pos] = f_s

    constraints = tuple(active + reactive + magnitude)
    logger.debug("QCPF for %s: %d rows, n_state=%d, vmax=%.4f",
                 case.name, len(constraints), 2 * n, vmax)
    return QcpfProblem(case, constraints, BoxBounds(lower, upper))


@dataclass(frozen=True)
class ViolationReport:
    """Per-row |tr(x x^T Z_k) - c_k| and their sum S."""

    values: np.ndarray
    total: float
    in_box: bool


def constraint_values(problem: QcpfProblem, x: np.ndarray) -> np.ndarray:
    """Signed row values tr(x x^T Z_k) - c_k.

    Args:
        problem: Quadratic program.
        x: Stacked [e; f] vector.

    Returns:
        One value per row.
    """
    x = np.asarray(x, dtype=float)
    return np.array([con.value(x) - con.c for con in problem.constraints])


def eval_violation(problem: QcpfProblem, x: RectState | np.ndarray
                   ) -> ViolationReport:
    """Evaluate the slack objective at a rank-1 point.

    Args:
        problem: Quadratic program.
        x: Rectangular state; out-of-box points are flagged, not rejected.

    Returns:
        Absolute row violations, their sum and the box flag.
    """
    vec = x.x if isinstance(x, RectState) else np.asarray(x, dtype=float)
    in_box = problem.bounds.contains(vec)
    if not in_box:
        logger.debug("violation evaluated outside the box")
    values = np.abs(constraint_values(problem, vec))
    return ViolationReport(values, float(values.sum()), in_box)


def dump_qcpf(problem: QcpfProblem) -> str:
    """Sparse-triplet text dump of every (Z_k, c_k).

    Format: a header line `# n_state <n> rows <m>`, then per row a line
    `row <k> <tag> <c_k>` followed by `<i> <j> <value>` lines for the
    upper-triangle nonzeros of Z_k (0-based indices).

    Args:
        problem: Quadratic program.

    Returns:
        The dump text.
    """
    lines = [f"# n_state {problem.n_state} rows {len(problem.constraints)}"]
    for k, con in enumerate(problem.constraints):
        lines.append(f"row {k} {con.tag} {con.c!r}")
        triplets = sparse.coo_matrix(np.triu(con.z))
        order = np.lexsort((triplets.col, triplets.row))
        for i, j, value in zip(triplets.row[order], triplets.col[order],
                               triplets.data[order]):
            lines.append(f"{i} {j} {value!r}")
    return "\n".join(lines) + "\n"
