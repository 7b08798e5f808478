"""Bus and branch records of a network case."""

from dataclasses import dataclass
from enum import Enum

from pfmulti.errors import CaseValidationError


class BusKind(Enum):
    """Bus classification.

    Values follow the MATPOWER bus type column:
    - 1: PQ (load) bus
    - 2: PV (generator) bus
    - 3: slack (V-theta) bus
    """
    PQ = 1
    PV = 2
    SLACK = 3

    @classmethod
    def from_code(cls, code: int) -> "BusKind":
        """Map a MATPOWER bus type code to a kind.

        Args:
            code: Integer bus type (1, 2 or 3).

        Returns:
            The matching BusKind.

        Raises:
            ValueError: If the code is not a supported bus type.
        """
        for kind in cls:
            if kind.value == code:
                return kind
        raise ValueError(f"unsupported bus type {code}")

    @property
    def label(self) -> str:
        """Lowercase name used by the JSON schema."""
        return self.name.lower()

    def holds_voltage(self) -> bool:
        """Check whether the bus has a magnitude setpoint.

        Returns:
            True for PV and slack buses.
        """
        return self in (BusKind.PV, BusKind.SLACK)


@dataclass(frozen=True)
class BusSpec:
    """A single bus of the network, all powers in p.u."""

    id: int
    kind: BusKind
    p_load: float = 0.0
    q_load: float = 0.0
    v_set: float | None = None
    theta_set: float | None = None
    p_gen: float | None = None
    g_shunt: float = 0.0
    b_shunt: float = 0.0
    v_min: float | None = None
    v_max: float | None = None
    q_min: float | None = None
    q_max: float | None = None

    def __post_init__(self) -> None:
        """Check the per-kind field rules.

        Raises:
            CaseValidationError: If a field required or forbidden by the
                bus kind is set wrongly.
        """
        if self.id <= 0:
            raise CaseValidationError(f"bus id {self.id} must be positive")
        if self.kind is BusKind.PQ:
            if (self.v_set is not None or self.theta_set is not None
                    or self.p_gen is not None):
                raise CaseValidationError(
                    f"PQ bus {self.id} cannot carry v_set, theta_set or "
                    "p_gen"
                )
        elif self.kind is BusKind.PV:
            if self.v_set is None or self.v_set <= 0:
                raise CaseValidationError(
                    f"PV bus {self.id} needs a positive v_set"
                )
            if self.p_gen is None:
                raise CaseValidationError(f"PV bus {self.id} needs p_gen")
        else:
            if self.v_set is None or self.v_set <= 0:
                raise CaseValidationError(
                    f"slack bus {self.id} needs a positive v_set"
                )
            if self.theta_set is None:
                raise CaseValidationError(
                    f"slack bus {self.id} needs theta_set"
                )

    @property
    def p_injection(self) -> float:
        """Scheduled active injection P^g - P^d."""
        return (self.p_gen or 0.0) - self.p_load


@dataclass(frozen=True)
class BranchParams:
    """A pi-model branch, admittances in p.u.

    The tap sits on the from side, as in MATPOWER.
    """

    from_bus: int
    to_bus: int
    series_g: float
    series_b: float
    charging_b: float = 0.0
    tap_ratio: float = 1.0
    rate_mva: float | None = None

    def __post_init__(self) -> None:
        """Check the branch invariants.

        Raises:
            CaseValidationError: On a self loop, a zero series admittance
                or a non-positive tap.
        """
        if self.from_bus == self.to_bus:
            raise CaseValidationError(
                f"branch {self.from_bus}-{self.to_bus} is a self loop"
            )
        if self.series_g == 0.0 and self.series_b == 0.0:
            raise CaseValidationError(
                f"branch {self.from_bus}-{self.to_bus} has zero series "
                "admittance"
            )
        if self.tap_ratio <= 0.0:
            raise CaseValidationError(
                f"branch {self.from_bus}-{self.to_bus} has tap "
                f"{self.tap_ratio}"
            )

    @property
    def series_y(self) -> complex:
        """Series admittance g + jb."""
        return complex(self.series_g, self.series_b)

    def touches(self, bus_id: int) -> bool:
        """Check whether the branch ends at a bus.

        Args:
            bus_id: Bus identifier.

        Returns:
            True if the bus is either end of the branch.
        """
        return bus_id in (self.from_bus, self.to_bus)

    def other_end(self, bus_id: int) -> int:
        """Return the bus at the opposite end.

        Args:
            bus_id: One end of the branch.

        Returns:
            The other end.
        """
        return self.to_bus if bus_id == self.from_bus else self.from_bus

    def end_shunt(self, bus_id: int) -> complex:
        """Admittance seen from one end when the other end is grounded.

        Args:
            bus_id: The end that stays energized.

        Returns:
            Diagonal contribution of the branch at that end.
        """
        y_end = self.series_y + 0.5j * self.charging_b
        if bus_id == self.from_bus:
            return y_end / self.tap_ratio ** 2
        return y_end
