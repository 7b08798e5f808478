"""Solution curves created by a grounded zero-injection bus.

A PV bus that generates no active power and hangs off a zero-injection
bus through a single lossless branch admits solutions where the
zero-injection bus sits at |V| = 0. The bus then acts as a ground point:
the rest of the network (S2) sees each branch into it as a shunt, and the
pendant bus angle becomes free. Every solution of S2 therefore spawns a
one-parameter family of full-network solutions.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from pfmulti.bus import BranchParams, BusKind, BusSpec
from pfmulti.enumerator import (
    EnumerationConfig,
    SolutionSet,
    enumerate_solutions,
)
from pfmulti.errors import (
    CaseValidationError,
    CurveAssemblyError,
    DecompositionError,
)
from pfmulti.network_case import NetworkCase
from pfmulti.pf_equations import (
    ZERO_MAGNITUDE,
    PolarSolution,
    branch_flows,
    residuals,
    solution_from_voltages,
)
from pfmulti.qcpf import build_qcpf

logger = logging.getLogger(__name__)

CURVE_TOL = 1e-8
DEFAULT_THETA_SAMPLES = 24


def _is_zero(value: float | None) -> bool:
    """Exact-zero test for case data."""
    return value is None or value == 0.0


@dataclass(frozen=True)
class ContinuumPattern:
    """A (zero bus, pendant bus, bridge) triple admitting |V_zero| = 0."""

    zero_bus: int
    pendant_bus: int
    bridge: BranchParams
    q_pendant: float
    pendant_v: float


@dataclass(frozen=True)
class SubsystemDecomposition:
    """The pendant pair S1 and the reduced network S2."""

    pattern: ContinuumPattern
    s2: NetworkCase
    added_shunts: dict[int, complex]

    @property
    def s1(self) -> tuple[int, int, BranchParams]:
        """Zero bus, pendant bus and bridge."""
        p = self.pattern
        return p.zero_bus, p.pendant_bus, p.bridge


@dataclass(frozen=True)
class SolutionCurve:
    """Full-network solutions parametrized by the pendant angle.

    Assembly: S2 voltages as solved, e = f = 0 at the zero bus and
    (v cos(theta), v sin(theta)) at the pendant bus.
    """

    case: NetworkCase = field(repr=False)
    s2_solution: PolarSolution
    zero_bus: int
    free_angle_bus: int
    pendant_v: float
    q_pendant: float
    thetas: np.ndarray = field(repr=False)
    max_residual: float = 0.0

    def assemble(self, theta: float) -> PolarSolution:
        """Full-network solution at one pendant angle.

        Args:
            theta: Pendant angle in radians.

        Returns:
            The assembled solution; the zero-bus angle is undefined.
        """
        v = np.zeros(self.case.n_bus, dtype=complex)
        s2_v = self.s2_solution.voltages()
        for bus_id, value in zip(self.s2_solution.bus_ids, s2_v):
            v[self.case.index_of(bus_id)] = value
        v[self.case.index_of(self.free_angle_bus)] = (
            self.pendant_v * np.exp(1j * theta)
        )
        return solution_from_voltages(self.case, v)

    def residual_at(self, theta: float) -> float:
        """Infinity-norm residual of the assembled state."""
        return residuals(self.case, self.assemble(theta)).norm


def detect_patterns(case: NetworkCase) -> list[ContinuumPattern]:
    """Find every zero-bus / pendant-bus pair of a case.

    The pendant bus is a PV bus with no active generation, load or shunt
    and a single branch. That branch is lossless, uncharged and untapped,
    and ends at a PQ bus with no load or shunt.

    Args:
        case: Network case.

    Returns:
        Patterns ordered by zero bus then pendant bus id.
    """
    patterns: list[ContinuumPattern] = []
    for bus in case.pv_buses:
        if not (_is_zero(bus.p_gen) and _is_zero(bus.p_load)
                and _is_zero(bus.q_load) and _is_zero(bus.g_shunt)
                and _is_zero(bus.b_shunt)):
            continue
        attached = case.branches_at(bus.id)
        if len(attached) != 1:
            continue
        bridge = attached[0]
        if not (bridge.series_g == 0.0 and bridge.charging_b == 0.0
                and bridge.tap_ratio == 1.0):
            continue
        zero = case.bus(bridge.other_end(bus.id))
        if zero.kind is not BusKind.PQ:
            continue
        if not (_is_zero(zero.p_load) and _is_zero(zero.q_load)
                and _is_zero(zero.g_shunt) and _is_zero(zero.b_shunt)):
            continue
        assert bus.v_set is not None
        q_pendant = -bus.v_set ** 2 * bridge.series_b
        patterns.append(ContinuumPattern(zero.id, bus.id, bridge,
                                         q_pendant, bus.v_set))
    patterns.sort(key=lambda p: (p.zero_bus, p.pendant_bus))
    logger.debug("%d continuum pattern(s) in %s", len(patterns), case.name)
    return patterns


def decompose(case: NetworkCase,
              pattern: ContinuumPattern) -> SubsystemDecomposition:
    """Split a case at a grounded zero bus.

    The zero and pendant buses and their branches are removed. Each other
    neighbour of the zero bus gains, per branch into it, the admittance
    that branch shows at its end when the zero bus is grounded. Bus ids
    are kept.

    Args:
        case: Network case.
        pattern: Pattern detected on this case.

    Returns:
        The decomposition.

    Raises:
        DecompositionError: If S2 is empty or disconnected.
    """
    removed = {pattern.zero_bus, pattern.pendant_bus}
    added: dict[int, complex] = {}
    for br in case.branches_at(pattern.zero_bus):
        neighbour = br.other_end(pattern.zero_bus)
        if neighbour in removed:
            continue
        added[neighbour] = added.get(neighbour, 0j) + br.end_shunt(neighbour)

    buses: list[BusSpec] = []
    for bus in case.buses:
        if bus.id in removed:
            continue
        extra = added.get(bus.id, 0j)
        buses.append(replace(bus, g_shunt=bus.g_shunt + extra.real,
                             b_shunt=bus.b_shunt + extra.imag))
    branches = [br for br in case.branches
                if br.from_bus not in removed and br.to_bus not in removed]

    try:
        s2 = NetworkCase(tuple(buses), tuple(branches), case.base_mva,
                         f"{case.name}-s2")
    except CaseValidationError as e:
        raise DecompositionError(
            f"bus {pattern.zero_bus} cannot split {case.name}: {e}"
        ) from e
    logger.info("S2 of %s: %d buses, shunts added at %s", case.name,
                s2.n_bus, sorted(added))
    return SubsystemDecomposition(pattern, s2, added)


def build_curves(case: NetworkCase, pattern: ContinuumPattern,
                 s2_solutions: Sequence[PolarSolution],
                 theta_samples: int = DEFAULT_THETA_SAMPLES,
                 pendant_v: float | None = None) -> list[SolutionCurve]:
    """Assemble one curve per S2 solution and verify it on a theta grid.

    Args:
        case: Full network case.
        pattern: Pattern used for the decomposition.
        s2_solutions: Certified S2 solutions.
        theta_samples: Number of equally spaced angles in [-pi, pi).
        pendant_v: Pendant magnitude, the case setpoint when None.

    Returns:
        Curves ordered by the sum of S2 magnitudes.

    Raises:
        CurveAssemblyError: If an assembled sample misses the residual
            tolerance.
    """
    if theta_samples <= 0:
        raise ValueError("theta_samples must be positive")
    v_p = pattern.pendant_v if pendant_v is None else pendant_v
    thetas = -np.pi + 2 * np.pi * np.arange(theta_samples) / theta_samples
    q_pendant = -v_p ** 2 * pattern.bridge.series_b

    curves: list[SolutionCurve] = []
    for s2_solution in sorted(s2_solutions,
                              key=lambda s: float(np.sum(s.v_mag))):
        curve = SolutionCurve(case, s2_solution, pattern.zero_bus,
                              pattern.pendant_bus, v_p, q_pendant, thetas)
        worst = 0.0
        for theta in thetas:
            res = curve.residual_at(float(theta))
            if not res < CURVE_TOL:
                raise CurveAssemblyError(
                    f"assembled state misses tolerance {CURVE_TOL}",
                    float(theta), res,
                )
            worst = max(worst, res)
        curves.append(replace(curve, max_residual=worst))
    return curves


class ViolationKind(Enum):
    """Reasons a solution would not be observed in operation."""
    Q_LIMIT = "Q-limit"
    V_LIMIT = "V-limit"
    FLOW_LIMIT = "flow-limit"
    ZERO_BUS_LOAD = "load-at-zero-bus"


@dataclass(frozen=True)
class OperatingLimits:
    """Per-bus V ranges, per-generator Q ranges and per-branch ratings.

    Powers in p.u.; a None table means the check is not performed.
    """

    v_range: dict[int, tuple[float, float]] | None = None
    q_range: dict[int, tuple[float, float]] | None = None
    rating: dict[int, float] | None = None


def limits_from_case(case: NetworkCase) -> OperatingLimits:
    """Collect the operating limits stored in a case.

    Args:
        case: Network case.

    Returns:
        Limits; tables with no entries are None.
    """
    v_range = {b.id: (b.v_min, b.v_max) for b in case.buses
               if b.v_min is not None and b.v_max is not None}
    q_range = {b.id: (b.q_min, b.q_max) for b in case.buses
               if b.kind.holds_voltage() and b.q_min is not None
               and b.q_max is not None}
    rating = {i: br.rate_mva / case.base_mva
              for i, br in enumerate(case.branches)
              if br.rate_mva is not None}
    return OperatingLimits(v_range or None, q_range or None, rating or None)


@dataclass(frozen=True)
class Violation:
    """One violated operating condition."""

    kind: ViolationKind
    subject: int
    value: float
    limit: float

    def describe(self) -> str:
        """One-line description."""
        where = "branch" if self.kind is ViolationKind.FLOW_LIMIT else "bus"
        return (f"{self.kind.value} at {where} {self.subject}: "
                f"{self.value:.4f} vs {self.limit:.4f}")


@dataclass(frozen=True)
class PracticalityAnnotation:
    """Violated conditions and the checks that could not be made."""

    violations: tuple[Violation, ...]
    unchecked: tuple[ViolationKind, ...]

    @property
    def kinds(self) -> set[ViolationKind]:
        """Distinct violated condition kinds."""
        return {v.kind for v in self.violations}

    def buses(self, kind: ViolationKind) -> list[int]:
        """Subjects violating one condition, sorted."""
        return sorted({v.subject for v in self.violations if v.kind is kind})

    @property
    def practical(self) -> bool:
        """No violation found among the checked conditions."""
        return not self.violations

    def describe(self) -> list[str]:
        """Report lines."""
        lines = [v.describe() for v in self.violations]
        limit_kinds = (ViolationKind.Q_LIMIT, ViolationKind.V_LIMIT,
                       ViolationKind.FLOW_LIMIT)
        if all(k in self.unchecked for k in limit_kinds):
            lines.append("unchecked: all")
        elif self.unchecked:
            lines.append("unchecked: " + ", ".join(k.value
                                                    for k in self.unchecked))
        return lines


def practicality_filter(case: NetworkCase,
                        item: PolarSolution | SolutionCurve,
                        limits: OperatingLimits | None,
                        tol: float = 1e-9) -> PracticalityAnnotation:
    """Annotate a solution or curve with the operating limits it breaks.

    Curves are checked at theta = 0; magnitudes, flows and generator
    outputs do not depend on the pendant angle.

    Args:
        case: Network case the solution belongs to.
        item: Full-network solution or curve.
        limits: Operating limits, None to skip every limit check.
        tol: Slack on every limit.

    Returns:
        The annotation; the solution itself is untouched.
    """
    sol = item.assemble(0.0) if isinstance(item, SolutionCurve) else item
    limits = limits or OperatingLimits()
    violations: list[Violation] = []
    unchecked: list[ViolationKind] = []

    for bus in case.buses:
        if sol.magnitude(bus.id) <= ZERO_MAGNITUDE and (
                bus.p_load != 0.0 or bus.q_load != 0.0):
            violations.append(Violation(ViolationKind.ZERO_BUS_LOAD, bus.id,
                                        0.0, 0.0))

    if limits.q_range is None:
        unchecked.append(ViolationKind.Q_LIMIT)
    else:
        for bus_id, (q_min, q_max) in sorted(limits.q_range.items()):
            q = sol.q_gen.get(bus_id)
            if q is None:
                continue
            if q > q_max + tol:
                violations.append(Violation(ViolationKind.Q_LIMIT, bus_id,
                                            q, q_max))
            elif q < q_min - tol:
                violations.append(Violation(ViolationKind.Q_LIMIT, bus_id,
                                            q, q_min))

    if limits.v_range is None:
        unchecked.append(ViolationKind.V_LIMIT)
    else:
        for bus_id, (v_min, v_max) in sorted(limits.v_range.items()):
            v = sol.magnitude(bus_id)
            if v > v_max + tol:
                violations.append(Violation(ViolationKind.V_LIMIT, bus_id,
                                            v, v_max))
            elif v < v_min - tol:
                violations.append(Violation(ViolationKind.V_LIMIT, bus_id,
                                            v, v_min))

    if limits.rating is None:
        unchecked.append(ViolationKind.FLOW_LIMIT)
    else:
        worst: dict[int, float] = {}
        for flow in branch_flows(case, sol):
            worst[flow.branch_index] = max(worst.get(flow.branch_index, 0.0),
                                           flow.apparent)
        for index, rating in sorted(limits.rating.items()):
            if worst.get(index, 0.0) > rating + tol:
                violations.append(Violation(ViolationKind.FLOW_LIMIT, index,
                                            worst[index], rating))

    return PracticalityAnnotation(tuple(violations), tuple(unchecked))


@dataclass(frozen=True)
class ContinuumAnalysis:
    """One pattern carried through decomposition, search and assembly."""

    split: SubsystemDecomposition
    search: SolutionSet
    curves: tuple[SolutionCurve, ...]
    annotations: tuple[PracticalityAnnotation, ...]

    @property
    def pattern(self) -> ContinuumPattern:
        """Pattern analysed."""
        return self.split.pattern

    @property
    def complete(self) -> bool:
        """Whether the S2 search finished within its budget."""
        return self.search.complete


def analyse_pattern(case: NetworkCase, pattern: ContinuumPattern,
                    vmax: float | None = None,
                    config: EnumerationConfig | None = None,
                    theta_samples: int = DEFAULT_THETA_SAMPLES,
                    pendant_v: float | None = None,
                    limits: OperatingLimits | None = None
                    ) -> ContinuumAnalysis:
    """Find the solution curves of one pattern.

    S2 is split off, its isolated solutions are enumerated, and every
    one of them is assembled into a verified curve annotated against the
    operating limits.

    Args:
        case: Full network case.
        pattern: Pattern detected on the case.
        vmax: Magnitude cap of the S2 box, its default when None.
        config: Search tunables.
        theta_samples: Pendant angles verified per curve.
        pendant_v: Pendant magnitude, the case setpoint when None.
        limits: Operating limits, those stored in the case when None.

    Returns:
        The analysis; `complete` is False when the S2 search ran out of
        budget.

    Raises:
        DecompositionError: If S2 is empty or disconnected.
        CurveAssemblyError: If an assembled sample misses the tolerance.
    """
    split = decompose(case, pattern)
    problem = build_qcpf(split.s2, vmax)
    search = enumerate_solutions(problem, config=config)
    curves = build_curves(case, pattern,
                          [c.solution for c in search.isolated],
                          theta_samples, pendant_v)
    limits = limits if limits is not None else limits_from_case(case)
    annotations = tuple(practicality_filter(case, c, limits) for c in curves)
    logger.info("zero bus %d: %d curve(s)%s", pattern.zero_bus, len(curves),
                "" if search.complete else ", search incomplete")
    return ContinuumAnalysis(split, search, tuple(curves), annotations)
