"""Power-flow residuals, branch flows and rectangular Newton refinement.

Residuals follow the bus balance form: for every PV and PQ bus the
scheduled active injection minus the power leaving through the shunt and
the branches, and the same for reactive power at PQ buses. Branches use
the pi model with an off-nominal tap on the from side; with zero charging
and unit tap the flows reduce to the plain series-branch expressions.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from pfmulti.bus import BusKind
from pfmulti.network_case import AdmittanceMatrix, NetworkCase, build_ybus

logger = logging.getLogger(__name__)

# Magnitudes at or below this value have no defined angle.
ZERO_MAGNITUDE = 1e-9
SINGULAR_COND = 1e14


@dataclass(frozen=True)
class PolarSolution:
    """Bus voltages in polar form plus recovered generator outputs.

    `theta` holds NaN wherever the angle is undefined.
    """

    bus_ids: tuple[int, ...]
    v_mag: np.ndarray
    theta: np.ndarray
    q_gen: dict[int, float] = field(default_factory=dict)
    p_gen_slack: float = 0.0

    def __post_init__(self) -> None:
        """Freeze the arrays and mark undefined angles."""
        v_mag = np.array(self.v_mag, dtype=float)
        theta = np.array(self.theta, dtype=float)
        if v_mag.shape != theta.shape or v_mag.shape != (len(self.bus_ids),):
            raise ValueError("v_mag and theta must match bus_ids")
        if np.any(v_mag < 0):
            raise ValueError("voltage magnitudes must be non-negative")
        theta[v_mag <= ZERO_MAGNITUDE] = np.nan
        v_mag.setflags(write=False)
        theta.setflags(write=False)
        object.__setattr__(self, "v_mag", v_mag)
        object.__setattr__(self, "theta", theta)

    @property
    def angle_defined(self) -> np.ndarray:
        """Boolean mask of buses with a defined angle."""
        return np.asarray(~np.isnan(self.theta))

    def voltages(self) -> np.ndarray:
        """Complex bus voltages; undefined angles count as 0.

        Returns:
            Complex voltage vector in internal bus order.
        """
        theta = np.nan_to_num(self.theta, nan=0.0)
        return np.asarray(self.v_mag * np.exp(1j * theta))

    def rectangular(self) -> np.ndarray:
        """Stacked real vector [e; f].

        Returns:
            Array of length 2N.
        """
        v = self.voltages()
        return np.concatenate([v.real, v.imag])

    def magnitude(self, bus_id: int) -> float:
        """Voltage magnitude of a bus."""
        return float(self.v_mag[self.bus_ids.index(bus_id)])

    def angle(self, bus_id: int) -> float:
        """Voltage angle of a bus in radians, NaN when undefined."""
        return float(self.theta[self.bus_ids.index(bus_id)])


@dataclass(frozen=True)
class BranchFlow:
    """Power leaving `from_bus` towards `to_bus` on one branch end, p.u."""

    branch_index: int
    from_bus: int
    to_bus: int
    p_flow: float
    q_flow: float

    @property
    def apparent(self) -> float:
        """Apparent power |S| at this end."""
        return float(np.hypot(self.p_flow, self.q_flow))


@dataclass(frozen=True)
class ResidualVector:
    """Per-equation mismatches, active rows first then reactive rows."""

    values: np.ndarray
    labels: tuple[tuple[str, int], ...]
    norm: float = field(init=False)

    def __post_init__(self) -> None:
        """Cache the infinity norm."""
        values = np.asarray(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        norm = float(np.max(np.abs(values))) if values.size else 0.0
        object.__setattr__(self, "norm", norm)

    def __len__(self) -> int:
        """Number of equations."""
        return int(self.values.size)


class NewtonStatus(Enum):
    """Outcome of a Newton-type refinement."""
    CONVERGED = "converged"
    MAX_ITER = "max_iter"
    SINGULAR = "singular"


@dataclass(frozen=True)
class NewtonResult:
    """Result of `newton_refine` or `gauss_newton_correct`."""

    status: NewtonStatus
    x: np.ndarray
    iterations: int
    residual_norm: float
    solution: PolarSolution | None = None

    @property
    def converged(self) -> bool:
        """True when the residual tolerance was met."""
        return self.status is NewtonStatus.CONVERGED


def bus_injections(ybus: AdmittanceMatrix, voltages: np.ndarray) -> np.ndarray:
    """Complex power leaving every bus into the network, S = V conj(YV).

    Args:
        ybus: Admittance matrix.
        voltages: Complex bus voltages.

    Returns:
        Complex injections, shunts included.
    """
    return np.asarray(voltages * np.conj(ybus.matrix @ voltages))


def solution_from_voltages(case: NetworkCase, voltages: np.ndarray,
                           ybus: AdmittanceMatrix | None = None
                           ) -> PolarSolution:
    """Build a polar solution and recover the generator outputs.

    Args:
        case: Network case.
        voltages: Complex bus voltages.
        ybus: Admittance matrix, built when omitted.

    Returns:
        The polar solution with q_gen of PV and slack buses and the
        slack active generation.
    """
    ybus = ybus or build_ybus(case)
    s_inj = bus_injections(ybus, voltages)
    q_gen: dict[int, float] = {}
    p_gen_slack = 0.0
    for pos, bus in enumerate(case.buses):
        if bus.kind.holds_voltage():
            q_gen[bus.id] = float(s_inj[pos].imag + bus.q_load)
        if bus.kind is BusKind.SLACK:
            p_gen_slack = float(s_inj[pos].real + bus.p_load)
    return PolarSolution(
        case.bus_ids, np.abs(voltages), np.angle(voltages), q_gen, p_gen_slack
    )


def solution_from_rect(case: NetworkCase, x: np.ndarray,
                       ybus: AdmittanceMatrix | None = None) -> PolarSolution:
    """Build a polar solution from a stacked [e; f] vector.

    Args:
        case: Network case.
        x: Real vector of length 2N.
        ybus: Admittance matrix, built when omitted.

    Returns:
        The polar solution.
    """
    n = case.n_bus
    return solution_from_voltages(case, x[:n] + 1j * x[n:], ybus)


def flat_start(case: NetworkCase) -> np.ndarray:
    """Classic flat start in rectangular form.

    Slack and PV buses start at their setpoint magnitude, PQ buses at
    1.0 p.u.; all angles are zero except the slack setpoint.

    Args:
        case: Network case.

    Returns:
        Stacked [e; f] vector.
    """
    v = np.ones(case.n_bus, dtype=complex)
    for pos, bus in enumerate(case.buses):
        if bus.v_set is not None:
            v[pos] = bus.v_set
        if bus.kind is BusKind.SLACK:
            v[pos] = bus.v_set * np.exp(1j * bus.theta_set)
    return np.concatenate([v.real, v.imag])


LOW_VOLTAGE_LEVELS = (0.7, 0.5, 0.3)
SAGGED_BUS_LEVEL = 0.2


def newton_starts(case: NetworkCase, n_random: int = 0,
                  rng: np.random.Generator | None = None
                  ) -> list[np.ndarray]:
    """Starting points reaching beyond the flat start.

    The flat start comes first, then flat starts with every PQ magnitude
    lowered to each of `LOW_VOLTAGE_LEVELS`, then one start per PQ bus
    with that bus sagged to `SAGGED_BUS_LEVEL`. Random starts draw PQ
    magnitudes in [0.05, 1.1] and a common angle drop in [-pi/2, 0]
    with per-bus jitter.

    Args:
        case: Network case.
        n_random: Number of random starts.
        rng: Random generator, a fixed-seed one when omitted.

    Returns:
        Stacked [e; f] vectors, the slack at its setpoint in each.
    """
    base = flat_start(case)
    n = case.n_bus
    v_base = base[:n] + 1j * base[n:]
    pq = np.array([bus.kind is BusKind.PQ for bus in case.buses])
    slack = case.index_of(case.slack.id)

    def stack(v: np.ndarray) -> np.ndarray:
        return np.concatenate([v.real, v.imag])

    starts = [base]
    for level in LOW_VOLTAGE_LEVELS:
        v = v_base.copy()
        v[pq] = level
        starts.append(stack(v))
    for pos in np.flatnonzero(pq):
        v = v_base.copy()
        v[pos] = SAGGED_BUS_LEVEL
        starts.append(stack(v))

    rng = rng if rng is not None else np.random.default_rng(0)
    for _ in range(n_random):
        magnitude = np.abs(v_base)
        magnitude[pq] = rng.uniform(0.05, 1.1, int(pq.sum()))
        theta = rng.uniform(-np.pi / 2, 0.0) + rng.uniform(-0.3, 0.3, n)
        v = magnitude * np.exp(1j * theta)
        v[slack] = v_base[slack]
        starts.append(stack(v))
    return starts


def branch_flows(case: NetworkCase, sol: PolarSolution) -> list[BranchFlow]:
    """Evaluate the flows at both ends of every branch.

    Args:
        case: Network case.
        sol: Polar solution matching the case.

    Returns:
        Two entries per branch, from end first.
    """
    v = sol.voltages()
    flows: list[BranchFlow] = []
    for index, br in enumerate(case.branches):
        v_f = v[case.index_of(br.from_bus)]
        v_t = v[case.index_of(br.to_bus)]
        y = br.series_y
        i_f = br.end_shunt(br.from_bus) * v_f - y / br.tap_ratio * v_t
        i_t = br.end_shunt(br.to_bus) * v_t - y / br.tap_ratio * v_f
        s_f = v_f * np.conj(i_f)
        s_t = v_t * np.conj(i_t)
        flows.append(BranchFlow(index, br.from_bus, br.to_bus,
                                float(s_f.real), float(s_f.imag)))
        flows.append(BranchFlow(index, br.to_bus, br.from_bus,
                                float(s_t.real), float(s_t.imag)))
    return flows


def residuals(case: NetworkCase, sol: PolarSolution,
              ybus: AdmittanceMatrix | None = None) -> ResidualVector:
    """Evaluate the bus balance mismatches.

    Args:
        case: Network case.
        sol: Polar solution matching the case.
        ybus: Admittance matrix, built when omitted.

    Returns:
        Active mismatches for PV and PQ buses, then reactive mismatches
        for PQ buses, in bus order.
    """
    ybus = ybus or build_ybus(case)
    s_inj = bus_injections(ybus, sol.voltages())
    values: list[float] = []
    labels: list[tuple[str, int]] = []
    for pos, bus in enumerate(case.buses):
        if bus.kind is not BusKind.SLACK:
            values.append(bus.p_injection - s_inj[pos].real)
            labels.append(("P", bus.id))
    for pos, bus in enumerate(case.buses):
        if bus.kind is BusKind.PQ:
            values.append(-bus.q_load - s_inj[pos].imag)
            labels.append(("Q", bus.id))
    return ResidualVector(np.array(values), tuple(labels))


class RectangularEquations:
    """Power-flow equations over [e; f] with pinned coordinates.

    The slack bus is pinned at its setpoint and every bus listed in
    `fixed_buses` is pinned at e = f = 0; the equations of pinned buses
    are dropped. Rows: active balance (PV and PQ), reactive balance (PQ),
    magnitude e^2 + f^2 = v_set^2 (PV), each group in bus order.
    """

    def __init__(self, case: NetworkCase,
                 fixed_buses: Sequence[int] = (),
                 ybus: AdmittanceMatrix | None = None) -> None:
        """Initialize the equation system.

        Args:
            case: Network case.
            fixed_buses: Bus ids pinned at zero voltage.
            ybus: Admittance matrix, built when omitted.
        """
        self.case = case
        self.ybus = ybus or build_ybus(case)
        self.n = case.n_bus
        fixed = {case.index_of(b) for b in fixed_buses}
        slack = case.index_of(case.slack.id)

        self.pinned_values: dict[int, float] = {}
        s = case.slack
        assert s.v_set is not None and s.theta_set is not None
        self.pinned_values[slack] = s.v_set * np.cos(s.theta_set)
        self.pinned_values[self.n + slack] = s.v_set * np.sin(s.theta_set)
        for pos in fixed:
            self.pinned_values[pos] = 0.0
            self.pinned_values[self.n + pos] = 0.0

        self.free = np.array(
            [i for i in range(2 * self.n) if i not in self.pinned_values],
            dtype=int,
        )
        active = [p for p, b in enumerate(case.buses)
                  if b.kind is not BusKind.SLACK and p not in fixed]
        self.p_rows = np.array(active, dtype=int)
        self.q_rows = np.array([p for p in active
                                if case.buses[p].kind is BusKind.PQ],
                               dtype=int)
        self.v_rows = np.array([p for p in active
                                if case.buses[p].kind is BusKind.PV],
                               dtype=int)
        self.p_target = np.array([case.buses[p].p_injection
                                  for p in self.p_rows])
        self.q_target = np.array([-case.buses[p].q_load
                                  for p in self.q_rows])
        self.v_target = np.array([case.buses[p].v_set ** 2
                                  for p in self.v_rows])

    @property
    def n_equations(self) -> int:
        """Number of rows."""
        return int(self.p_rows.size + self.q_rows.size + self.v_rows.size)

    def pin(self, x: np.ndarray) -> np.ndarray:
        """Copy a state and overwrite its pinned coordinates.

        Args:
            x: Stacked [e; f] vector.

        Returns:
            The pinned copy.
        """
        x = np.array(x, dtype=float)
        for i, value in self.pinned_values.items():
            x[i] = value
        return x

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Mismatch vector target - computed.

        Args:
            x: Stacked [e; f] vector.

        Returns:
            Residual rows.
        """
        v = x[:self.n] + 1j * x[self.n:]
        s_inj = bus_injections(self.ybus, v)
        mag2 = np.abs(v) ** 2
        return np.concatenate([
            self.p_target - s_inj[self.p_rows].real,
            self.q_target - s_inj[self.q_rows].imag,
            self.v_target - mag2[self.v_rows],
        ])

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """Jacobian of the computed side with respect to free coordinates.

        Args:
            x: Stacked [e; f] vector.

        Returns:
            Matrix of shape (n_equations, n_free).
        """
        n = self.n
        v = x[:n] + 1j * x[n:]
        y = self.ybus.matrix
        i_conj = np.conj(y @ v)
        ds_de = np.diag(i_conj) + np.diag(v) @ np.conj(y)
        ds_df = 1j * np.diag(i_conj) - 1j * np.diag(v) @ np.conj(y)
        ds = np.hstack([ds_de, ds_df])

        dmag = np.zeros((n, 2 * n))
        dmag[np.arange(n), np.arange(n)] = 2 * x[:n]
        dmag[np.arange(n), n + np.arange(n)] = 2 * x[n:]

        full = np.vstack([
            ds[self.p_rows].real,
            ds[self.q_rows].imag,
            dmag[self.v_rows],
        ])
        return np.asarray(full[:, self.free])


def _finish(eqs: RectangularEquations, status: NewtonStatus, x: np.ndarray,
            iterations: int, norm: float) -> NewtonResult:
    """Wrap a Newton iterate into a result."""
    solution = None
    if status is NewtonStatus.CONVERGED:
        solution = solution_from_rect(eqs.case, x, eqs.ybus)
    return NewtonResult(status, x, iterations, norm, solution)


def newton_refine(case: NetworkCase, guess: np.ndarray,
                  fixed_buses: Sequence[int] = (),
                  max_iter: int = 50, tol: float = 1e-10,
                  max_halvings: int = 10,
                  ybus: AdmittanceMatrix | None = None) -> NewtonResult:
    """Refine a candidate with Newton's method in rectangular coordinates.

    Zero-magnitude buses keep a regular Jacobian in this form. Steps are
    halved up to `max_halvings` times while the residual norm does not
    decrease.

    Args:
        case: Network case.
        guess: Stacked [e; f] starting point, finite.
        fixed_buses: Bus ids pinned at zero voltage.
        max_iter: Iteration limit.
        tol: Infinity-norm convergence tolerance.
        max_halvings: Step halving limit per iteration.
        ybus: Admittance matrix, built when omitted.

    Returns:
        Converged result with its polar solution, or a failure carrying
        the last iterate.
    """
    if not np.all(np.isfinite(guess)):
        raise ValueError("guess must have finite entries")
    eqs = RectangularEquations(case, fixed_buses, ybus)
    x = eqs.pin(guess)
    mismatch = eqs.evaluate(x)
    norm = float(np.max(np.abs(mismatch))) if mismatch.size else 0.0

    for iteration in range(max_iter + 1):
        if norm < tol:
            return _finish(eqs, NewtonStatus.CONVERGED, x, iteration, norm)
        if iteration == max_iter:
            break

        jac = eqs.jacobian(x)
        if np.linalg.cond(jac) > SINGULAR_COND:
            logger.debug("singular Jacobian after %d iterations", iteration)
            return _finish(eqs, NewtonStatus.SINGULAR, x, iteration, norm)
        try:
            step = np.linalg.solve(jac, mismatch)
        except np.linalg.LinAlgError:
            return _finish(eqs, NewtonStatus.SINGULAR, x, iteration, norm)

        # Damped update
        alpha = 1.0
        for _ in range(max_halvings + 1):
            trial = x.copy()
            trial[eqs.free] += alpha * step
            trial_mismatch = eqs.evaluate(trial)
            trial_norm = float(np.max(np.abs(trial_mismatch)))
            if trial_norm < norm:
                break
            alpha *= 0.5
        x, mismatch, norm = trial, trial_mismatch, trial_norm

    return _finish(eqs, NewtonStatus.MAX_ITER, x, max_iter, norm)


def gauss_newton_correct(case: NetworkCase, guess: np.ndarray,
                         fixed_buses: Sequence[int] = (),
                         max_iter: int = 50, tol: float = 1e-10,
                         ybus: AdmittanceMatrix | None = None
                         ) -> NewtonResult:
    """Project a point onto the solution set with minimum-norm steps.

    Unlike `newton_refine` this tolerates a rank-deficient Jacobian, as
    found on solution curves, and moves orthogonally to the curve.

    Args:
        case: Network case.
        guess: Stacked [e; f] starting point.
        fixed_buses: Bus ids pinned at zero voltage.
        max_iter: Iteration limit.
        tol: Infinity-norm convergence tolerance.
        ybus: Admittance matrix, built when omitted.

    Returns:
        The correction result.
    """
    eqs = RectangularEquations(case, fixed_buses, ybus)
    x = eqs.pin(guess)
    mismatch = eqs.evaluate(x)
    norm = float(np.max(np.abs(mismatch))) if mismatch.size else 0.0
    for iteration in range(max_iter + 1):
        if norm < tol:
            return _finish(eqs, NewtonStatus.CONVERGED, x, iteration, norm)
        if iteration == max_iter:
            break
        step = np.linalg.lstsq(eqs.jacobian(x), mismatch, rcond=1e-12)[0]
        x = x.copy()
        x[eqs.free] += step
        mismatch = eqs.evaluate(x)
        norm = float(np.max(np.abs(mismatch)))
    return _finish(eqs, NewtonStatus.MAX_ITER, x, max_iter, norm)


@dataclass(frozen=True)
class SolutionCheck:
    """Verification of a supplied solution.

    `distance` is the infinity-norm move in (e, f) needed to reach an
    exact root, or inf when the correction failed.
    """

    residual: float
    distance: float
    setpoint_mismatch: tuple[int, ...]
    passed: bool


def _detached_pv(case: NetworkCase, sol: PolarSolution) -> frozenset[int]:
    """PV buses whose every neighbour sits at zero magnitude in `sol`.

    No balance row depends on the magnitude of such a bus.
    """
    zero = sol.v_mag <= ZERO_MAGNITUDE
    return frozenset(
        bus.id for pos, bus in enumerate(case.buses)
        if bus.kind is BusKind.PV and not zero[pos]
        and all(zero[case.index_of(n)] for n in case.neighbours(bus.id))
    )


def check_solution(case: NetworkCase, sol: PolarSolution,
                   tol: float = 1e-3) -> SolutionCheck:
    """Check that a supplied point solves the case to within `tol`.

    PV magnitudes are held to the case's own setpoints. The point passes
    when its balance residual is below `tol` with every PV magnitude on
    its setpoint, or when a minimum-norm correction reaches a root less
    than `tol` away, which absorbs the rounding of printed values.

    A PV bus whose neighbours are all at zero magnitude is cut off from
    the network; its magnitude is taken as supplied and any departure
    from the setpoint is only reported in `setpoint_mismatch`.

    Args:
        case: Network case.
        sol: Supplied solution in the case's bus order.
        tol: Acceptance tolerance.

    Returns:
        The check result.
    """
    if sol.bus_ids != case.bus_ids:
        raise ValueError("solution buses do not match the case")
    raw = residuals(case, sol).norm
    mismatch = tuple(
        bus.id for pos, bus in enumerate(case.buses)
        if bus.kind is BusKind.PV and bus.v_set is not None
        and abs(sol.v_mag[pos] - bus.v_set) > tol
    )
    detached = _detached_pv(case, sol)
    binding = [b for b in mismatch if b not in detached]
    if mismatch:
        logger.warning("magnitudes differ from setpoints at buses %s",
                       ", ".join(map(str, mismatch)))
    if raw < tol and not binding:
        return SolutionCheck(raw, 0.0, mismatch, True)

    buses = tuple(
        replace(bus, v_set=float(sol.v_mag[pos]))
        if bus.id in detached else bus
        for pos, bus in enumerate(case.buses)
    )
    held = NetworkCase(buses, case.branches, case.base_mva, case.name)
    start = sol.rectangular()
    corrected = gauss_newton_correct(held, start)
    if not corrected.converged:
        return SolutionCheck(raw, np.inf, mismatch, False)
    distance = float(np.max(np.abs(corrected.x - start)))
    logger.info("raw residual %.3e, distance to root %.3e", raw, distance)
    return SolutionCheck(raw, distance, mismatch, distance < tol)
