"""Semidefinite relaxation of the power-flow program with RLT envelopes.

X = x x^T is replaced by a positive semidefinite matrix tied to x through
the three McCormick families over the current box. The program is built
once with cvxpy parameters for the box, so moving to another box only
resets parameter values and re-solves.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import cvxpy as cp
import numpy as np

from pfmulti.qcpf import BoxBounds, QcpfProblem

logger = logging.getLogger(__name__)

EPS_S = 1e-6
RANK1_TOL = 1e-6
OBBT_MARGIN = 1e-7
DEFAULT_SOLVER = "CLARABEL"

SOLVER_OPTIONS: dict[str, dict[str, Any]] = {
    "CLARABEL": {"tol_gap_abs": 1e-8, "tol_gap_rel": 1e-8,
                 "tol_feas": 1e-8},
    "SCS": {"eps_abs": 1e-8, "eps_rel": 1e-8, "max_iters": 200000},
}

# Second attempt after an inaccurate or failed solve
RETRY_OPTIONS: dict[str, dict[str, Any]] = {
    "CLARABEL": {"tol_gap_abs": 1e-7, "tol_gap_rel": 1e-7,
                 "tol_feas": 1e-7, "max_iter": 400,
                 "equilibrate_max_iter": 50,
                 "iterative_refinement_max_iter": 20},
    "SCS": {"eps_abs": 1e-7, "eps_rel": 1e-7, "max_iters": 400000},
}


class SolverStatus(Enum):
    """Outcome of one conic solve."""
    OPTIMAL = "optimal"
    INACCURATE = "inaccurate"
    INFEASIBLE = "infeasible"
    FAILED = "failed"


@dataclass(frozen=True)
class RltEnvelope:
    """The three RLT families linking x and X over a box.

    - X >= l x^T + x l^T - l l^T
    - X >= u x^T + x u^T - u u^T
    - X <= x u^T + l x^T - l u^T
    The first two are symmetric; the third holds entry by entry.
    """

    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def from_box(cls, box: BoxBounds) -> "RltEnvelope":
        """Envelope of a box."""
        return cls(box.lower, box.upper)

    @property
    def n(self) -> int:
        """State dimension."""
        return int(self.lower.size)

    @property
    def row_count(self) -> int:
        """Number of scalar linear rows of the three families."""
        n = self.n
        return n * (n + 1) + n * n

    def slacks(self, x: np.ndarray, x_mat: np.ndarray
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Slack of each family at (x, X); all entries >= 0 when valid.

        Args:
            x: State vector.
            x_mat: Lifted matrix X.

        Returns:
            Three n x n slack matrices.
        """
        lo, up = self.lower, self.upper
        under_lo = x_mat - (np.outer(lo, x) + np.outer(x, lo)
                            - np.outer(lo, lo))
        under_up = x_mat - (np.outer(up, x) + np.outer(x, up)
                            - np.outer(up, up))
        over = (np.outer(x, up) + np.outer(lo, x) - np.outer(lo, up)) - x_mat
        return under_lo, under_up, over

    def satisfied(self, x: np.ndarray, x_mat: np.ndarray,
                  tol: float = 1e-12) -> bool:
        """Check every family at (x, X) up to `tol`."""
        return all(float(s.min()) >= -tol for s in self.slacks(x, x_mat))


@dataclass(frozen=True)
class RelaxationResult:
    """Optimum of one relaxation solve with rank diagnostics."""

    x_opt: np.ndarray
    x_mat: np.ndarray
    s_cvx: float
    eig_ratio: float
    extraction: np.ndarray
    solver_status: SolverStatus
    second_direction: np.ndarray = field(repr=False)

    @property
    def usable(self) -> bool:
        """Whether the bound may be trusted for pruning."""
        return self.solver_status is SolverStatus.OPTIMAL

    @property
    def infeasible(self) -> bool:
        """Whether the solver proved the relaxation infeasible."""
        return self.solver_status is SolverStatus.INFEASIBLE

    def rank_one(self, tol: float = RANK1_TOL) -> bool:
        """Numerical rank-1 test on X."""
        return self.eig_ratio < tol

    def diagonal_gap(self) -> np.ndarray:
        """Per-coordinate X_ii - x_i^2, zero at rank-1 points."""
        return np.asarray(np.diag(self.x_mat) - self.x_opt ** 2)


def _failed_result(n: int, status: SolverStatus) -> RelaxationResult:
    """Placeholder result of an unusable solve."""
    nan_vec = np.full(n, np.nan)
    return RelaxationResult(nan_vec, np.full((n, n), np.nan), np.inf,
                            np.inf, nan_vec, status, nan_vec)


def _status_of(problem: cp.Problem) -> SolverStatus:
    """Map a cvxpy status string."""
    if problem.status == cp.OPTIMAL:
        return SolverStatus.OPTIMAL
    if problem.status == cp.OPTIMAL_INACCURATE:
        return SolverStatus.INACCURATE
    if problem.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return SolverStatus.INFEASIBLE
    return SolverStatus.FAILED


class RelaxationProgram:
    """Standard-form conic program of the relaxation over a box.

    Variables: the bordered matrix M = [1 x^T; x X], slacks s+ and s-.
    Objective: sum(s+ + s-). Rows: tr(X Z_k) + s+_k - s-_k = c_k, the
    box on x and the RLT families. The PSD cone is placed on M
    (`bordered=True`) or on X alone.

    Instances hold solver state and must not be shared between threads.
    """

    def __init__(self, problem: QcpfProblem, box: BoxBounds,
                 bordered: bool = True, solver: str = DEFAULT_SOLVER,
                 solver_options: dict[str, Any] | None = None) -> None:
        """Build the parametrized program.

        Args:
            problem: Quadratic program supplying Z_k and c_k.
            box: Initial box.
            bordered: Lift with [1 x^T; x X] instead of X alone.
            solver: cvxpy solver name.
            solver_options: Extra solver keyword arguments.
        """
        self.problem = problem
        self.bordered = bordered
        self.solver = solver
        self.solver_options = dict(SOLVER_OPTIONS.get(solver, {}))
        self.solver_options.update(solver_options or {})
        self.solve_count = 0

        n = problem.n_state
        m = len(problem.constraints)
        self.n_state = n
        self.n_equality = m

        self.lifted = cp.Variable((n + 1, n + 1), symmetric=True)
        self.s_plus = cp.Variable(m, nonneg=True)
        self.s_minus = cp.Variable(m, nonneg=True)
        x_col = self.lifted[1:, 0:1]
        x_row = self.lifted[0:1, 1:]
        x_mat = self.lifted[1:, 1:]
        self.x = self.lifted[1:, 0]

        self._lower = cp.Parameter(n)
        self._upper = cp.Parameter(n)
        self._lower_col = cp.Parameter((n, 1))
        self._upper_col = cp.Parameter((n, 1))
        self._lower_row = cp.Parameter((1, n))
        self._upper_row = cp.Parameter((1, n))
        self._ll = cp.Parameter((n, n))
        self._uu = cp.Parameter((n, n))
        self._lu = cp.Parameter((n, n))
        self._eps = cp.Parameter(nonneg=True)
        self._cost = cp.Parameter(n)

        cone = self.lifted >> 0 if bordered else x_mat >> 0
        constraints = [self.lifted[0, 0] == 1, cone]
        for k, con in enumerate(problem.constraints):
            constraints.append(
                cp.sum(cp.multiply(con.z, x_mat))
                + self.s_plus[k] - self.s_minus[k] == con.c
            )
        constraints += [self.x >= self._lower, self.x <= self._upper]
        constraints += [
            self._lower_col @ x_row + x_col @ self._lower_row - self._ll
            <= x_mat,
            self._upper_col @ x_row + x_col @ self._upper_row - self._uu
            <= x_mat,
            x_mat <= x_col @ self._upper_row + self._lower_col @ x_row
            - self._lu,
        ]
        slack_sum = cp.sum(self.s_plus + self.s_minus)
        self._bound_problem = cp.Problem(cp.Minimize(slack_sum), constraints)
        self._obbt_problem = cp.Problem(
            cp.Minimize(self._cost @ self.x),
            constraints + [slack_sum <= self._eps],
        )
        self.box = box
        self.set_box(box)

    @property
    def envelope(self) -> RltEnvelope:
        """RLT envelope of the current box."""
        return RltEnvelope.from_box(self.box)

    @property
    def n_rlt(self) -> int:
        """Number of RLT rows."""
        return self.envelope.row_count

    @property
    def psd_dim(self) -> int:
        """Order of the PSD cone."""
        return self.n_state + 1 if self.bordered else self.n_state

    def set_box(self, box: BoxBounds) -> None:
        """Move the program to another box.

        Args:
            box: New bounds, same dimension.
        """
        if box.size != self.n_state:
            raise ValueError("box dimension does not match the program")
        lo, up = box.lower, box.upper
        self.box = box
        self._lower.value = lo
        self._upper.value = up
        self._lower_col.value = lo.reshape(-1, 1)
        self._upper_col.value = up.reshape(-1, 1)
        self._lower_row.value = lo.reshape(1, -1)
        self._upper_row.value = up.reshape(1, -1)
        self._ll.value = np.outer(lo, lo)
        self._uu.value = np.outer(up, up)
        self._lu.value = np.outer(lo, up)

    def _run(self, problem: cp.Problem,
             options: dict[str, Any] | None = None) -> SolverStatus:
        """Solve one of the compiled problems."""
        self.solve_count += 1
        try:
            # Options that differ from the cached solver need a fresh
            # solver: Clarabel rejects some settings on update.
            problem.solve(solver=self.solver,
                          warm_start=options is None,
                          **(self.solver_options if options is None
                             else options))
        except cp.error.SolverError as e:
            logger.debug("conic solver error: %s", e)
            return SolverStatus.FAILED
        return _status_of(problem)

    def solve(self) -> RelaxationResult:
        """Minimize the slack sum over the current box.

        An inaccurate or failed solve is repeated once with the looser
        settings of `RETRY_OPTIONS`. The slacks keep the program feasible
        for every box, so a reported infeasibility is retried the same
        way.

        Returns:
            The relaxation optimum; unusable results carry s_cvx = inf.
        """
        status = self._run(self._bound_problem)
        retry = RETRY_OPTIONS.get(self.solver)
        if status is not SolverStatus.OPTIMAL and retry is not None:
            logger.debug("%s solve %s, retrying with looser settings",
                         self.solver, status.value)
            status = self._run(self._bound_problem,
                               {**self.solver_options, **retry})
        if status in (SolverStatus.INFEASIBLE, SolverStatus.FAILED):
            return _failed_result(self.n_state, status)
        lifted = self.lifted.value
        if lifted is None:
            return _failed_result(self.n_state, SolverStatus.FAILED)
        lifted = (lifted + lifted.T) / 2
        x_opt = np.array(lifted[1:, 0])
        x_mat = np.array(lifted[1:, 1:])
        s_cvx = max(float(self._bound_problem.value), 0.0)

        eigval, eigvec = np.linalg.eigh(x_mat)
        lead, second = eigval[-1], eigval[-2] if eigval.size > 1 else 0.0
        v1 = eigvec[:, -1]
        if float(v1 @ x_opt) < 0:
            v1 = -v1
        if lead > 1e-12:
            eig_ratio = max(float(second), 0.0) / float(lead)
            extraction = np.sqrt(lead) * v1
        else:
            eig_ratio = 0.0
            extraction = np.zeros(self.n_state)
        v2 = eigvec[:, -2] if eigval.size > 1 else np.zeros(self.n_state)
        return RelaxationResult(x_opt, x_mat, s_cvx, eig_ratio, extraction,
                                status, v2)

    def bound_coordinate(self, index: int, maximize: bool,
                         eps_s: float = EPS_S) -> float | None:
        """Extreme value of one coordinate over the near-feasible set.

        Args:
            index: Coordinate of x.
            maximize: Maximize instead of minimize.
            eps_s: Cap on the slack sum.

        Returns:
            The optimal coordinate value, or None if the solve failed.
        """
        cost = np.zeros(self.n_state)
        cost[index] = -1.0 if maximize else 1.0
        self._cost.value = cost
        self._eps.value = eps_s
        status = self._run(self._obbt_problem)
        if status is not SolverStatus.OPTIMAL or self.x.value is None:
            return None
        return float(self.x.value[index])


def build_relaxation(problem: QcpfProblem, box: BoxBounds,
                     bordered: bool = True, solver: str = DEFAULT_SOLVER,
                     solver_options: dict[str, Any] | None = None
                     ) -> RelaxationProgram:
    """Construct the relaxation of a quadratic program over a box.

    Args:
        problem: Quadratic program.
        box: Bounds, lower <= upper.
        bordered: PSD cone on [1 x^T; x X] (default) or on X only.
        solver: cvxpy solver name.
        solver_options: Extra solver keyword arguments.

    Returns:
        The parametrized conic program.
    """
    return RelaxationProgram(problem, box, bordered, solver, solver_options)


def solve_relaxation(program: RelaxationProgram) -> RelaxationResult:
    """Solve a relaxation program over its current box.

    Args:
        program: Program from `build_relaxation`.

    Returns:
        The relaxation result.
    """
    return program.solve()


def obbt_tighten(program: RelaxationProgram, box: BoxBounds,
                 eps_s: float = EPS_S,
                 margin: float = OBBT_MARGIN) -> BoxBounds:
    """Shrink a box by optimizing every free coordinate over the relaxation.

    Each coordinate is minimized and maximized over the relaxation with
    the slack sum capped at `eps_s`. Subproblems all use the input box.
    A failed subproblem keeps the old bound; the returned box is never
    wider than the input.

    Args:
        program: Relaxation program of the same quadratic program.
        box: Box to tighten.
        eps_s: Zero threshold of the slack objective.
        margin: Outward safety margin against solver tolerance.

    Returns:
        The tightened box.
    """
    program.set_box(box)
    lower = box.lower.copy()
    upper = box.upper.copy()
    for i in np.flatnonzero(~box.fixed):
        low = program.bound_coordinate(int(i), maximize=False, eps_s=eps_s)
        high = program.bound_coordinate(int(i), maximize=True, eps_s=eps_s)
        new_low = box.lower[i] if low is None else max(box.lower[i],
                                                       low - margin)
        new_high = box.upper[i] if high is None else min(box.upper[i],
                                                         high + margin)
        if new_low <= new_high:
            lower[i], upper[i] = new_low, new_high
    tightened = BoxBounds(lower, upper)
    program.set_box(tightened)
    return tightened


def dump_standard_form(program: RelaxationProgram) -> str:
    """Text dump of the conic program for offline cross-checking.

    Sections: header, objective, cone, one `eq` line per equality row
    followed by the upper-triangle triplets of Z_k, `box` lines and the
    RLT summary. Indices are 0-based over x.

    Args:
        program: Relaxation program at its current box.

    Returns:
        The dump text.
    """
    n, m = program.n_state, program.n_equality
    lines = [
        f"# relaxation n_state {n} equality_rows {m} "
        f"rlt_rows {program.n_rlt}",
        f"objective minimize sum(s_plus[0:{m}] + s_minus[0:{m}])",
        f"cone psd order {program.psd_dim} "
        f"{'bordered' if program.bordered else 'plain'}",
    ]
    for k, con in enumerate(program.problem.constraints):
        lines.append(f"eq {k} {con.tag} rhs {con.c!r}")
        rows, cols = np.nonzero(np.triu(con.z))
        for i, j in zip(rows, cols):
            lines.append(f"  {i} {j} {con.z[i, j]!r}")
    for i, (lo, up) in enumerate(zip(program.box.lower, program.box.upper)):
        lines.append(f"box {i} {lo!r} {up!r}")
    lines.append("rlt lower(l) lower(u) upper(l,u)")
    return "\n".join(lines) + "\n"
