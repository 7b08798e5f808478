"""Network case container and bus admittance matrix."""

from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from pfmulti.bus import BranchParams, BusKind, BusSpec
from pfmulti.errors import CaseValidationError


@dataclass(frozen=True)
class NetworkCase:
    """Validated network data: buses, branches and per-unit base.

    Bus identifiers are kept as given by the case file; internal array
    positions follow the order of `buses`.
    """

    buses: tuple[BusSpec, ...]
    branches: tuple[BranchParams, ...]
    base_mva: float = 100.0
    name: str = "case"
    adjacency: dict[int, frozenset[int]] = field(
        init=False, repr=False, compare=False
    )
    _positions: dict[int, int] = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        """Validate the case and derive the adjacency sets.

        Raises:
            CaseValidationError: If bus ids repeat, the slack count is not
                one, the branch list is empty, a branch ends at an unknown
                bus or the network is disconnected.
        """
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))

        if self.base_mva <= 0:
            raise CaseValidationError("base_mva must be positive")

        positions: dict[int, int] = {}
        for pos, bus in enumerate(self.buses):
            if bus.id in positions:
                raise CaseValidationError(f"duplicate bus id {bus.id}")
            positions[bus.id] = pos
        object.__setattr__(self, "_positions", positions)

        slacks = [b.id for b in self.buses if b.kind is BusKind.SLACK]
        if len(slacks) != 1:
            raise CaseValidationError(
                f"exactly one slack bus required, found {len(slacks)}"
            )
        if not self.branches:
            raise CaseValidationError("case has no branches")

        graph = nx.Graph()
        graph.add_nodes_from(positions)
        for branch in self.branches:
            for end in (branch.from_bus, branch.to_bus):
                if end not in positions:
                    raise CaseValidationError(
                        f"branch {branch.from_bus}-{branch.to_bus} ends at "
                        f"unknown bus {end}"
                    )
            graph.add_edge(branch.from_bus, branch.to_bus)
        if not nx.is_connected(graph):
            raise CaseValidationError("network graph is disconnected")

        adjacency = {
            bus_id: frozenset(graph.neighbors(bus_id)) for bus_id in positions
        }
        object.__setattr__(self, "adjacency", adjacency)

    @property
    def n_bus(self) -> int:
        """Number of buses."""
        return len(self.buses)

    @property
    def bus_ids(self) -> tuple[int, ...]:
        """Bus identifiers in internal order."""
        return tuple(bus.id for bus in self.buses)

    @property
    def slack(self) -> BusSpec:
        """The slack bus."""
        return next(b for b in self.buses if b.kind is BusKind.SLACK)

    @property
    def pv_buses(self) -> tuple[BusSpec, ...]:
        """PV buses in internal order."""
        return tuple(b for b in self.buses if b.kind is BusKind.PV)

    @property
    def pq_buses(self) -> tuple[BusSpec, ...]:
        """PQ buses in internal order."""
        return tuple(b for b in self.buses if b.kind is BusKind.PQ)

    def index_of(self, bus_id: int) -> int:
        """Get the internal position of a bus.

        Args:
            bus_id: Bus identifier.

        Returns:
            0-based position in `buses`.

        Raises:
            KeyError: If the bus does not exist.
        """
        return self._positions[bus_id]

    def bus(self, bus_id: int) -> BusSpec:
        """Get a bus by identifier.

        Args:
            bus_id: Bus identifier.

        Returns:
            The bus record.
        """
        return self.buses[self._positions[bus_id]]

    def neighbours(self, bus_id: int) -> frozenset[int]:
        """Get the buses sharing a branch with a bus.

        Args:
            bus_id: Bus identifier.

        Returns:
            Neighbour identifiers, the bus itself excluded.
        """
        return self.adjacency[bus_id]

    def branches_at(self, bus_id: int) -> list[BranchParams]:
        """Get every branch ending at a bus.

        Args:
            bus_id: Bus identifier.

        Returns:
            Branches in case order.
        """
        return [br for br in self.branches if br.touches(bus_id)]


@dataclass(frozen=True)
class AdmittanceMatrix:
    """Dense complex bus admittance matrix Y = G + jB."""

    matrix: np.ndarray
    bus_ids: tuple[int, ...]

    @property
    def g(self) -> np.ndarray:
        """Conductance part G."""
        return np.asarray(self.matrix.real)

    @property
    def b(self) -> np.ndarray:
        """Susceptance part B."""
        return np.asarray(self.matrix.imag)


def build_ybus(case: NetworkCase) -> AdmittanceMatrix:
    """Assemble the bus admittance matrix of a case.

    Off-diagonals hold -y/tap per branch; diagonals accumulate series
    admittance, half charging, tap scaling on the from side and bus
    shunts.

    Args:
        case: Validated network case.

    Returns:
        The admittance matrix, read-only.
    """
    n = case.n_bus
    ybus = np.zeros((n, n), dtype=complex)

    for branch in case.branches:
        i = case.index_of(branch.from_bus)
        k = case.index_of(branch.to_bus)
        y = branch.series_y
        tap = branch.tap_ratio
        ybus[i, i] += branch.end_shunt(branch.from_bus)
        ybus[k, k] += branch.end_shunt(branch.to_bus)
        ybus[i, k] -= y / tap
        ybus[k, i] -= y / tap

    for pos, bus in enumerate(case.buses):
        ybus[pos, pos] += complex(bus.g_shunt, bus.b_shunt)

    ybus.setflags(write=False)
    return AdmittanceMatrix(ybus, case.bus_ids)
