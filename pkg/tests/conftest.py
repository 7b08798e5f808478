"""Shared fixtures: bundled cases and the published |V7| = 0 solutions."""

import csv
import math
from pathlib import Path

import numpy as np
import pytest

from pfmulti.bus import BranchParams, BusKind, BusSpec
from pfmulti.case_parser import bundled_case
from pfmulti.network_case import NetworkCase
from pfmulti.pf_equations import PolarSolution

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def case14() -> NetworkCase:
    return bundled_case("case14")


@pytest.fixture(scope="session")
def case2() -> NetworkCase:
    return bundled_case("case2")


@pytest.fixture(scope="session")
def case2_noload() -> NetworkCase:
    return bundled_case("case2_noload")


@pytest.fixture(scope="session")
def case3() -> NetworkCase:
    return bundled_case("case3")


@pytest.fixture(scope="session")
def table2_path() -> Path:
    return DATA / "table2.csv"


@pytest.fixture(scope="session")
def table2(table2_path: Path) -> dict[int, list[tuple[float, float | None]]]:
    """Bus id -> [(vm, va_deg or None) for solution 1 and 2]."""
    rows: dict[int, list[tuple[float, float | None]]] = {}
    with open(table2_path) as file:
        for row in csv.DictReader(file):
            rows[int(row["bus"])] = [
                (float(row[f"vm_{k}"]),
                 None if row[f"va_{k}"] == "-" else float(row[f"va_{k}"]))
                for k in (1, 2)
            ]
    return rows


def table2_solution(case: NetworkCase,
                    table2: dict[int, list[tuple[float, float | None]]],
                    index: int) -> PolarSolution:
    """Published solution `index` (0 or 1) over the buses of `case`."""
    v_mag = np.array([table2[b][index][0] for b in case.bus_ids])
    theta = np.array([
        0.0 if table2[b][index][1] is None
        else math.radians(table2[b][index][1])
        for b in case.bus_ids
    ])
    return PolarSolution(case.bus_ids, v_mag, theta)


def twin_pendant_case() -> NetworkCase:
    """A load bus feeding two zero buses, each with a pendant generator."""
    buses = (
        BusSpec(1, BusKind.SLACK, v_set=1.0, theta_set=0.0),
        BusSpec(2, BusKind.PQ, p_load=0.3, q_load=0.1),
        BusSpec(3, BusKind.PQ),
        BusSpec(4, BusKind.PV, v_set=1.02, p_gen=0.0),
        BusSpec(5, BusKind.PQ),
        BusSpec(6, BusKind.PV, v_set=1.01, p_gen=0.0),
    )
    branches = (
        BranchParams(1, 2, 1.0, -8.0),
        BranchParams(2, 3, 0.0, -5.0),
        BranchParams(3, 4, 0.0, -4.0),
        BranchParams(2, 5, 0.0, -6.0),
        BranchParams(5, 6, 0.0, -3.0),
    )
    return NetworkCase(buses, branches, 100.0, "twin")
