"""Branch-and-bound enumeration of power-flow solutions over a box.

Every node solves the relaxation of its box. Boxes whose slack bound is
above the zero threshold cannot hold a solution and are pruned. The
others are tightened, searched for a rank-1 candidate that Newton can
certify, and split. Newton runs from a spread of starts before the
search so that most roots are known early. A wide box holding a known
root is bisected without a solve; once narrow, the root's small
exclusion cube is cut out of it. Boxes that shrink to the width floor
without yielding a root become suspects.
"""

import hashlib
import heapq
import logging
import threading
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import null_space

from pfmulti.errors import PreconditionError
from pfmulti.pf_equations import (
    PolarSolution,
    RectangularEquations,
    gauss_newton_correct,
    newton_refine,
    newton_starts,
    residuals,
)
from pfmulti.qcpf import BoxBounds, QcpfProblem
from pfmulti.relaxation import (
    DEFAULT_SOLVER,
    EPS_S,
    RANK1_TOL,
    RelaxationProgram,
    RelaxationResult,
    build_relaxation,
    obbt_tighten,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnumerationConfig:
    """Tunables of the search.

    Attributes:
        eps_s: Zero threshold of the relaxation objective.
        rank_tol: Eigenvalue ratio below which X counts as rank 1.
        isolation_floor: Box width at which a node becomes a suspect.
        dedup_tol: Infinity-norm distance merging two roots.
        exclusion_factor: Exclusion cube half-width in dedup tolerances.
        budget: Maximum number of conic solves.
        obbt_passes: Bound-tightening passes per node.
        central_fraction: Share of the interval a split point may use.
        workers: Nodes processed concurrently.
        bordered: Lift with [1 x^T; x X] instead of X alone.
        solver: cvxpy solver name.
        newton_tol: Residual certifying a root.
        carve_factor: Box width, in exclusion radii, below which known
            roots are cut out; wider boxes holding a root are bisected.
        seed_newton: Run Newton from a spread of starts before the search.
        seed_random_starts: Random starts among the seeds.
        seed_perturbations: Perturbed restarts around each seeded root.
        rng_seed: Seed of the start generator.
    """

    eps_s: float = EPS_S
    rank_tol: float = RANK1_TOL
    isolation_floor: float = 1e-3
    dedup_tol: float = 1e-4
    exclusion_factor: float = 10.0
    budget: int = 20000
    obbt_passes: int = 1
    central_fraction: float = 0.6
    workers: int = 1
    bordered: bool = True
    solver: str = DEFAULT_SOLVER
    newton_tol: float = 1e-10
    carve_factor: float = 8.0
    seed_newton: bool = True
    seed_random_starts: int = 48
    seed_perturbations: int = 6
    rng_seed: int = 0

    def __post_init__(self) -> None:
        """Check ranges.

        Raises:
            ValueError: If a tolerance or count is out of range.
        """
        for name in ("eps_s", "rank_tol", "isolation_floor", "dedup_tol",
                     "exclusion_factor", "newton_tol", "carve_factor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.budget <= 0 or self.workers <= 0:
            raise ValueError("budget and workers must be positive")
        if min(self.obbt_passes, self.seed_random_starts,
               self.seed_perturbations) < 0:
            raise ValueError("pass and start counts must be non-negative")
        if not 0 < self.central_fraction <= 1:
            raise ValueError("central_fraction must lie in (0, 1]")

    @property
    def exclusion_radius(self) -> float:
        """Half-width of the cube closed around a certified root."""
        return self.exclusion_factor * self.dedup_tol

    @property
    def carve_width(self) -> float:
        """Widest box a root's exclusion cube is cut out of."""
        return self.carve_factor * self.exclusion_radius


class NodeStatus(Enum):
    """Life cycle of a search node."""
    OPEN = "open"
    PRUNED = "pruned"
    SOLUTION = "solution"
    SUSPECT = "suspect"


class SuspectClass(Enum):
    """Verdict on a box that resisted isolation."""
    CURVE = "curve-suspect"
    NUMERICAL = "numerical-difficulty"


@dataclass
class SearchNode:
    """A box of the search tree; `s_cvx` is the parent bound until solved."""

    box: BoxBounds
    node_id: int
    depth: int = 0
    s_cvx: float = 0.0
    status: NodeStatus = NodeStatus.OPEN

    @property
    def digest(self) -> str:
        """Short hash identifying the box in progress logs."""
        bounds = np.round(np.concatenate([self.box.lower, self.box.upper]),
                          12)
        return hashlib.sha1(bounds.tobytes()).hexdigest()[:8]


@dataclass(frozen=True)
class CertifiedSolution:
    """A root with its rectangular state and residual certificate."""

    x: np.ndarray
    solution: PolarSolution
    residual: float


@dataclass(frozen=True)
class SuspectRegion:
    """A floor-width box whose relaxation stayed at zero without a root."""

    box: BoxBounds
    s_cvx: float
    eig_ratio: float
    verdict: SuspectClass


@dataclass
class SolutionSet:
    """Isolated roots, suspect boxes and search statistics."""

    isolated: list[CertifiedSolution] = field(default_factory=list)
    suspects: list[SuspectRegion] = field(default_factory=list)
    complete: bool = True
    conic_solves: int = 0
    nodes: int = 0

    def __len__(self) -> int:
        """Number of isolated roots."""
        return len(self.isolated)


@dataclass
class _NodeOutcome:
    """What processing one node produced, merged by the search loop."""

    action: str
    s_cvx: float
    solves: int
    box: BoxBounds
    children: list[BoxBounds] = field(default_factory=list)
    roots: list[CertifiedSolution] = field(default_factory=list)
    suspect: SuspectRegion | None = None


def _sort_key(x: np.ndarray) -> tuple[float, ...]:
    """Lexicographic key of a state vector."""
    return tuple(float(v) for v in x)


def dedup(solutions: Sequence[CertifiedSolution],
          tol: float = 1e-4) -> SolutionSet:
    """Merge roots closer than `tol` in the infinity norm over (e, f).

    Each cluster is represented by its lexicographically smallest member.

    Args:
        solutions: Certified roots.
        tol: Merge distance.

    Returns:
        A solution set of representatives in lexicographic order.
    """
    kept: list[CertifiedSolution] = []
    for sol in sorted(solutions, key=lambda s: _sort_key(s.x)):
        if all(np.max(np.abs(sol.x - rep.x)) > tol for rep in kept):
            kept.append(sol)
    return SolutionSet(isolated=kept)


def exclusion_split(box: BoxBounds, cube: BoxBounds) -> list[BoxBounds]:
    """Cut a cube out of a box.

    The remainder is returned as slabs, one per side of the cube along
    each coordinate in turn. The slabs and the intersection partition the
    box with shared faces only.

    Args:
        box: Box to cut.
        cube: Region to close.

    Returns:
        Slabs covering box minus cube; `[box]` if they do not meet.
    """
    inner = box.intersect(cube)
    if inner is None or np.any((inner.width == 0) & ~box.fixed):
        return [box]
    slabs: list[BoxBounds] = []
    lower = box.lower.copy()
    upper = box.upper.copy()
    for i in range(box.size):
        if lower[i] < inner.lower[i]:
            up = upper.copy()
            up[i] = inner.lower[i]
            slabs.append(BoxBounds(lower.copy(), up))
            lower[i] = inner.lower[i]
        if upper[i] > inner.upper[i]:
            lo = lower.copy()
            lo[i] = inner.upper[i]
            slabs.append(BoxBounds(lo, upper.copy()))
            upper[i] = inner.upper[i]
    return slabs


def _certify(problem: QcpfProblem, start: np.ndarray,
             root_box: BoxBounds, config: EnumerationConfig
             ) -> CertifiedSolution | None:
    """Run Newton from a start and keep the root if it is certified."""
    if not np.all(np.isfinite(start)):
        return None
    result = newton_refine(problem.case, start, tol=config.newton_tol)
    if not result.converged or result.solution is None:
        return None
    residual = residuals(problem.case, result.solution).norm
    if residual >= config.newton_tol:
        return None
    if not root_box.contains(result.x, tol=1e-12):
        return None
    return CertifiedSolution(result.x, result.solution, residual)


def _branch_point(box: BoxBounds, relax: RelaxationResult | None,
                  config: EnumerationConfig) -> tuple[int, float]:
    """Choose the split coordinate and position.

    With a usable relaxation the coordinate maximizing
    width * (X_ii - x_i^2) is cut at x_opt clamped to the central part of
    the interval; otherwise the widest coordinate is cut in the middle.
    """
    width = box.width
    free = ~box.fixed
    if relax is not None and relax.usable:
        score = np.where(free, width * np.maximum(relax.diagonal_gap(), 0.0),
                         -1.0)
        if float(score.max()) > 0.0:
            index = int(np.argmax(score))
            margin = 0.5 * (1.0 - config.central_fraction) * width[index]
            point = float(np.clip(relax.x_opt[index],
                                  box.lower[index] + margin,
                                  box.upper[index] - margin))
            return index, point
    index = int(np.argmax(np.where(free, width, -1.0)))
    return index, float(box.lower[index] + 0.5 * width[index])


def classify_suspect(box: BoxBounds, problem: QcpfProblem,
                     relax: RelaxationResult | None = None,
                     config: EnumerationConfig | None = None,
                     program: RelaxationProgram | None = None
                     ) -> SuspectClass:
    """Decide whether a floor-width box sits on a solution curve.

    Starting from the relaxation optimum, a root is found by minimum-norm
    correction. The curve tangent is the Jacobian null space, oriented
    along the second eigenvector of X. Predictor-corrector steps are taken
    in both directions; three or more distinct certified roots inside the
    box make a curve suspect.

    Args:
        box: Suspect box.
        problem: Quadratic program.
        relax: Relaxation over the box, solved here when omitted.
        config: Search tunables.
        program: Program reused for the solve.

    Returns:
        The verdict.

    Raises:
        PreconditionError: If the relaxation over the box is not at zero.
    """
    config = config or EnumerationConfig()
    if relax is None:
        program = program or build_relaxation(
            problem, box, config.bordered, config.solver)
        program.set_box(box)
        relax = program.solve()
    if not relax.usable or relax.s_cvx > config.eps_s:
        raise PreconditionError(
            f"suspect box needs s_cvx < {config.eps_s}, got {relax.s_cvx}"
        )

    case = problem.case
    eqs = RectangularEquations(case)
    start = eqs.pin(relax.x_opt)
    base = gauss_newton_correct(case, start, tol=config.newton_tol)
    if not base.converged or not box.contains(base.x, tol=1e-9):
        return SuspectClass.NUMERICAL

    step = box.max_free_width() / 8
    guide = relax.second_direction[eqs.free]
    points = [base.x]

    def tangent(x: np.ndarray, hint: np.ndarray) -> np.ndarray | None:
        basis = null_space(eqs.jacobian(x), rcond=1e-8)
        if basis.shape[1] == 0:
            return None
        direction = basis @ (basis.T @ hint)
        if np.linalg.norm(direction) < 1e-12:
            direction = basis[:, 0]
        return np.asarray(direction / np.linalg.norm(direction))

    for sign in (1.0, -1.0):
        x = base.x
        hint = sign * guide
        for _ in range(4):
            direction = tangent(x, hint)
            if direction is None:
                return SuspectClass.NUMERICAL
            predictor = x.copy()
            predictor[eqs.free] += step * direction
            corrected = gauss_newton_correct(case, predictor,
                                             tol=config.newton_tol)
            if not corrected.converged or not box.contains(corrected.x,
                                                           tol=1e-9):
                break
            if all(np.max(np.abs(corrected.x - p)) > 0.5 * step
                   for p in points):
                points.append(corrected.x)
            hint = direction
            x = corrected.x

    logger.debug("suspect box: %d certified points on the tangent walk",
                 len(points))
    return SuspectClass.CURVE if len(points) >= 3 else SuspectClass.NUMERICAL


class Enumerator:
    """Best-first branch-and-bound driver.

    The queue, the roots and the counters live in the driving thread;
    workers only evaluate nodes, each with its own relaxation programs.
    Outcomes are merged in node order.
    """

    def __init__(self, problem: QcpfProblem, box: BoxBounds | None = None,
                 config: EnumerationConfig | None = None) -> None:
        """Initialize the search.

        Args:
            problem: Quadratic program.
            box: Initial box, the program bounds when omitted.
            config: Search tunables.
        """
        self.problem = problem
        self.root_box = box if box is not None else problem.bounds
        if self.root_box.size != problem.n_state:
            raise ValueError("box dimension does not match the program")
        self.config = config or EnumerationConfig()
        self._local = threading.local()
        self._heap: list[tuple[float, int, SearchNode]] = []
        self._next_id = 0
        self.roots: list[CertifiedSolution] = []
        self.suspects: list[SuspectRegion] = []
        self.solves = 0
        self.nodes = 0

    def _program(self, alternate: bool = False) -> RelaxationProgram:
        """Relaxation program owned by the calling thread.

        Args:
            alternate: Return the program with the other lift, used when
                the configured one cannot solve a box.
        """
        name = "alternate" if alternate else "program"
        program = getattr(self._local, name, None)
        if program is None:
            bordered = self.config.bordered != alternate
            program = build_relaxation(self.problem, self.root_box,
                                       bordered, self.config.solver)
            setattr(self._local, name, program)
        return program

    def _solve_count(self) -> int:
        """Conic solves made by the calling thread's programs."""
        return sum(p.solve_count
                   for p in (getattr(self._local, "program", None),
                             getattr(self._local, "alternate", None))
                   if p is not None)

    def _relax(self, box: BoxBounds
               ) -> tuple[RelaxationProgram, RelaxationResult]:
        """Solve a box, falling back to the other lift when unusable."""
        program = self._program()
        program.set_box(box)
        relax = program.solve()
        if relax.usable:
            return program, relax
        other = self._program(alternate=True)
        other.set_box(box)
        second = other.solve()
        logger.debug("%s lift %s, other lift %s",
                     "bordered" if program.bordered else "plain",
                     relax.solver_status.value, second.solver_status.value)
        if second.usable:
            return other, second
        return program, relax

    def _cube(self, x: np.ndarray) -> BoxBounds:
        """Exclusion cube around a root."""
        radius = self.config.exclusion_radius
        return BoxBounds(x - radius, x + radius)

    def carve(self, box: BoxBounds) -> list[BoxBounds]:
        """Remove known roots' cubes from a box narrow enough to carve."""
        pieces = [box]
        for root in self.roots:
            cube = self._cube(root.x)
            pieces = [p for piece in pieces
                      for p in (exclusion_split(piece, cube)
                                if piece.max_free_width()
                                <= self.config.carve_width
                                else [piece])]
        return pieces

    def _holds_root(self, box: BoxBounds) -> bool:
        """Whether a known root lies in the box."""
        return any(box.contains(r.x) for r in self.roots)

    def _push(self, box: BoxBounds, depth: int, bound: float) -> None:
        """Queue a box after closing the known roots."""
        for piece in self.carve(box):
            node = SearchNode(piece, self._next_id, depth, bound)
            self._next_id += 1
            heapq.heappush(self._heap, (bound, node.node_id, node))

    def _known(self, root: CertifiedSolution) -> bool:
        """Whether a root duplicates a recorded one."""
        tol = self.config.dedup_tol
        return any(np.max(np.abs(root.x - r.x)) <= tol for r in self.roots)

    def _add_root(self, root: CertifiedSolution) -> bool:
        """Record a root unless it duplicates a known one.

        Open nodes narrow enough to carve are re-queued without the new
        exclusion cube; wider ones stay whole and are bisected when
        evaluated.
        """
        if self._known(root):
            return False
        self.roots.append(root)
        cube = self._cube(root.x)
        entries, self._heap = self._heap, []
        for bound, node_id, node in entries:
            if node.box.intersect(cube) is None or \
                    node.box.max_free_width() > self.config.carve_width:
                self._heap.append((bound, node_id, node))
                continue
            for piece in exclusion_split(node.box, cube):
                child = SearchNode(piece, self._next_id, node.depth, bound)
                self._next_id += 1
                self._heap.append((bound, child.node_id, child))
        heapq.heapify(self._heap)
        return True

    def seed_roots(self) -> int:
        """Certify Newton roots from a spread of starts before the search.

        Each root found is restarted from copies of itself scaled by
        1 +- 0.15 per coordinate, the signs drawn at random.

        Returns:
            The number of new roots recorded.
        """
        config = self.config
        if not config.seed_newton:
            return 0
        rng = np.random.default_rng(config.rng_seed)
        starts = newton_starts(self.problem.case, config.seed_random_starts,
                               rng)
        found = 0
        # restarts appended below are visited by this same loop
        for start in starts:
            root = _certify(self.problem, start, self.root_box, config)
            if root is None or not self._add_root(root):
                continue
            found += 1
            for _ in range(config.seed_perturbations):
                signs = rng.choice((-1.0, 1.0), size=root.x.size)
                starts.append(root.x * (1.0 + 0.15 * signs))
        logger.info("seeding: %d root(s) from %d Newton starts", found,
                    len(starts))
        return found

    def _evaluate(self, node: SearchNode) -> _NodeOutcome:
        """Process one node; touches no shared state."""
        config = self.config
        box = node.box
        if self._holds_root(box) and \
                box.max_free_width() > config.carve_width:
            index, point = _branch_point(box, None, config)
            return _NodeOutcome("bisect", 0.0, 0, box,
                                children=list(box.split(index, point)))

        first = self._solve_count()
        program, relax = self._relax(box)

        if relax.usable and relax.s_cvx <= config.eps_s:
            for _ in range(config.obbt_passes):
                tightened = obbt_tighten(program, box, config.eps_s)
                if np.array_equal(tightened.lower, box.lower) and \
                        np.array_equal(tightened.upper, box.upper):
                    break
                box = tightened
                relax = program.solve()
                if not relax.usable or relax.s_cvx > config.eps_s:
                    break

        solves = self._solve_count() - first
        if not relax.usable:
            if box.max_free_width() < config.isolation_floor:
                suspect = SuspectRegion(box, np.inf, np.inf,
                                        SuspectClass.NUMERICAL)
                return _NodeOutcome("suspect", np.inf, solves, box,
                                    suspect=suspect)
            index, point = _branch_point(box, None, config)
            return _NodeOutcome("failed", np.inf, solves, box,
                                children=list(box.split(index, point)))
        if relax.s_cvx > config.eps_s:
            return _NodeOutcome("pruned", relax.s_cvx, solves, box)

        roots = []
        for start in (relax.extraction, relax.x_opt):
            root = _certify(self.problem, start, self.root_box, config)
            if root is not None and not self._known(root) and \
                    all(np.max(np.abs(root.x - r.x)) > config.dedup_tol
                        for r in roots):
                roots.append(root)
        if any(box.contains(r.x) for r in roots):
            return _NodeOutcome("solution", relax.s_cvx, solves, box,
                                children=[box], roots=roots)

        if box.max_free_width() < config.isolation_floor:
            verdict = classify_suspect(box, self.problem, relax, config)
            suspect = SuspectRegion(box, relax.s_cvx, relax.eig_ratio,
                                    verdict)
            return _NodeOutcome("suspect", relax.s_cvx, solves, box,
                                roots=roots, suspect=suspect)

        index, point = _branch_point(box, relax, config)
        return _NodeOutcome("branch", relax.s_cvx, solves, box,
                            children=list(box.split(index, point)),
                            roots=roots)

    def _merge(self, node: SearchNode, outcome: _NodeOutcome) -> None:
        """Apply a node outcome to the shared search state."""
        self.nodes += 1
        self.solves += outcome.solves
        node.s_cvx = outcome.s_cvx
        logger.info("node %d depth %d box %s s_cvx %.3e %s", node.node_id,
                    node.depth, node.digest, outcome.s_cvx, outcome.action)

        for root in outcome.roots:
            self._add_root(root)
        if outcome.action == "pruned":
            node.status = NodeStatus.PRUNED
            return
        if outcome.suspect is not None:
            node.status = NodeStatus.SUSPECT
            self.suspects.append(outcome.suspect)
            return
        if outcome.action == "solution":
            node.status = NodeStatus.SOLUTION
        for child in outcome.children:
            self._push(child, node.depth + 1, outcome.s_cvx)

    def run(self) -> SolutionSet:
        """Search the initial box.

        Returns:
            The deduplicated roots and suspects; `complete` is False when
            the conic solve budget ran out with nodes still open.
        """
        self.seed_roots()
        self._push(self.root_box, 0, 0.0)
        workers = self.config.workers

        with ThreadPoolExecutor(max_workers=workers) as pool:
            while self._heap and self.solves < self.config.budget:
                batch = [heapq.heappop(self._heap)[2]
                         for _ in range(min(workers, len(self._heap)))]
                if workers == 1:
                    outcomes = [self._evaluate(batch[0])]
                else:
                    outcomes = list(pool.map(self._evaluate, batch))
                for node, outcome in zip(batch, outcomes):
                    self._merge(node, outcome)

        complete = not self._heap
        if not complete:
            logger.warning("conic solve budget %d exhausted with %d open "
                           "nodes", self.config.budget, len(self._heap))
        result = dedup(self.roots, self.config.dedup_tol)
        result.suspects = self.suspects
        result.complete = complete
        result.conic_solves = self.solves
        result.nodes = self.nodes
        logger.info("enumeration done: %d roots, %d suspects, %d solves",
                    len(result.isolated), len(result.suspects), self.solves)
        return result


def enumerate_solutions(problem: QcpfProblem, box: BoxBounds | None = None,
                        config: EnumerationConfig | None = None
                        ) -> SolutionSet:
    """Find every isolated power-flow solution in a box.

    Args:
        problem: Quadratic program of the case.
        box: Initial box, the program bounds when omitted.
        config: Search tunables.

    Returns:
        The solution set.
    """
    return Enumerator(problem, box, config).run()
