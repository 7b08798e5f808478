"""Human tables, JSON and CSV exports, and solution file reading."""

import csv
import io
import json
import math
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np

from pfmulti.config_parser import FORMATS
from pfmulti.continuum import (
    ContinuumAnalysis,
    PracticalityAnnotation,
    SolutionCurve,
)
from pfmulti.enumerator import SolutionSet
from pfmulti.errors import CaseParseError
from pfmulti.network_case import NetworkCase
from pfmulti.pf_equations import PolarSolution

UNDEFINED = "-"


def _num(value: float) -> str:
    """Six significant digits for human tables."""
    return f"{value:.6g}"


def _angle_deg(theta: float) -> float | None:
    """Degrees, None when undefined."""
    return None if math.isnan(theta) else math.degrees(theta)


def _bus_rows(sol: PolarSolution) -> list[dict[str, Any]]:
    """Per-bus JSON records."""
    return [
        {"bus": bus_id, "vm": float(vm), "va_deg": _angle_deg(float(va))}
        for bus_id, vm, va in zip(sol.bus_ids, sol.v_mag, sol.theta)
    ]


def dump_json(data: dict[str, Any]) -> str:
    """Serialize with stable key order and full float precision."""
    return json.dumps(data, indent=2, allow_nan=False) + "\n"


class ReportWriter:
    """Render run results in one of the output formats."""

    def __init__(self, case: NetworkCase, fmt: str = "table") -> None:
        """Initialize the writer.

        Args:
            case: Case the results belong to.
            fmt: One of `table`, `json` or `csv`.
        """
        if fmt not in FORMATS:
            raise ValueError(f"unknown format '{fmt}'")
        self.case = case
        self.fmt = fmt

    def solutions_table(self, solutions: Sequence[PolarSolution]) -> str:
        """Table in the |V| columns then angle columns layout.

        Args:
            solutions: Solutions over the same buses.

        Returns:
            The table text, angles in degrees, `-` when undefined.
        """
        k = len(solutions)
        header = (["Bus"] + [f"|V|_{i + 1}" for i in range(k)]
                  + [f"theta_{i + 1}" for i in range(k)])
        rows = [header]
        bus_ids = solutions[0].bus_ids if solutions else self.case.bus_ids
        for bus_id in bus_ids:
            row = [str(bus_id)]
            row += [_num(s.magnitude(bus_id)) for s in solutions]
            for s in solutions:
                deg = _angle_deg(s.angle(bus_id))
                row.append(UNDEFINED if deg is None else _num(deg))
            rows.append(row)
        widths = [max(len(r[c]) for r in rows) for c in range(len(header))]
        return "\n".join(
            "  ".join(cell.rjust(w) for cell, w in zip(r, widths))
            for r in rows
        ) + "\n"

    def solutions_csv(self, solutions: Sequence[PolarSolution]) -> str:
        """CSV `bus,vm_1..vm_k,va_1..va_k` with full precision."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        k = len(solutions)
        writer.writerow(["bus"] + [f"vm_{i + 1}" for i in range(k)]
                        + [f"va_{i + 1}" for i in range(k)])
        bus_ids = solutions[0].bus_ids if solutions else self.case.bus_ids
        for bus_id in bus_ids:
            row: list[str] = [str(bus_id)]
            row += [repr(s.magnitude(bus_id)) for s in solutions]
            for s in solutions:
                deg = _angle_deg(s.angle(bus_id))
                row.append(UNDEFINED if deg is None else repr(deg))
            writer.writerow(row)
        return buffer.getvalue()

    def newton(self, sol: PolarSolution, residual: float) -> str:
        """Render the operating point."""
        if self.fmt == "json":
            return dump_json({
                "case": self.case.name,
                "mode": "newton",
                "solutions": [{"index": 1, "residual": residual,
                               "buses": _bus_rows(sol)}],
            })
        if self.fmt == "csv":
            return self.solutions_csv([sol])
        return (self.solutions_table([sol])
                + f"residual = {residual:.3e}\n")

    def solution_set(self, result: SolutionSet) -> str:
        """Render an enumeration result."""
        sols = [c.solution for c in result.isolated]
        if self.fmt == "json":
            return dump_json({
                "case": self.case.name,
                "mode": "enumerate",
                "complete": result.complete,
                "conic_solves": result.conic_solves,
                "nodes": result.nodes,
                "solutions": [
                    {"index": i + 1, "residual": c.residual,
                     "buses": _bus_rows(c.solution)}
                    for i, c in enumerate(result.isolated)
                ],
                "suspects": [
                    {"lower": s.box.lower.tolist(),
                     "upper": s.box.upper.tolist(),
                     "s_cvx": s.s_cvx if math.isfinite(s.s_cvx) else None,
                     "verdict": s.verdict.value}
                    for s in result.suspects
                ],
            })
        if self.fmt == "csv":
            return self.solutions_csv(sols)
        lines = [f"{len(sols)} isolated solution(s), "
                 f"{len(result.suspects)} suspect box(es)"]
        if not result.complete:
            lines.append("search incomplete: conic solve budget exhausted")
        text = "\n".join(lines) + "\n"
        if sols:
            text += self.solutions_table(sols)
        for i, s in enumerate(result.suspects):
            text += (f"suspect {i + 1}: {s.verdict.value}, "
                     f"width {_num(s.box.max_free_width())}\n")
        return text

    def continuum(self, analyses: Sequence[ContinuumAnalysis]) -> str:
        """Render continuum results, one section per pattern.

        JSON carries, per curve, the S2 solution, the assembly rule, the
        theta sample table, the full solution at theta = 0 and the
        practicality annotation.
        """
        complete = all(a.complete for a in analyses)
        if self.fmt == "json":
            return dump_json({
                "case": self.case.name,
                "mode": "continuum",
                "complete": complete,
                "analyses": [self._analysis_record(a) for a in analyses],
            })
        if self.fmt == "csv":
            return self.solutions_csv([c.assemble(0.0) for a in analyses
                                       for c in a.curves])
        sections = [self._analysis_table(a) for a in analyses]
        return "\n".join(sections)

    def _analysis_table(self, analysis: ContinuumAnalysis) -> str:
        """Table section of one pattern."""
        pattern = analysis.pattern
        full = [c.assemble(0.0) for c in analysis.curves]
        lines = [
            f"pattern: zero bus {pattern.zero_bus}, pendant bus "
            f"{pattern.pendant_bus}",
            f"Q_pendant = {pattern.q_pendant:.4f} p.u.",
            f"{len(analysis.curves)} solution curve(s)",
        ]
        if not analysis.complete:
            lines.append("search incomplete: conic solve budget exhausted")
        text = "\n".join(lines) + "\n"
        if full:
            text += self.solutions_table(full)
        for i, (c, a) in enumerate(zip(analysis.curves,
                                       analysis.annotations)):
            text += (f"curve {i + 1}: theta_{c.free_angle_bus} free, "
                     f"|V_{c.free_angle_bus}| = {c.pendant_v:.4f}, "
                     f"max residual {c.max_residual:.3e}\n")
            for line in a.describe() or ["practical"]:
                text += f"  {line}\n"
        return text

    def _analysis_record(self, analysis: ContinuumAnalysis
                         ) -> dict[str, Any]:
        """JSON record of one pattern."""
        pattern = analysis.pattern
        return {
            "pattern": {
                "zero_bus": pattern.zero_bus,
                "pendant_bus": pattern.pendant_bus,
                "bridge": [pattern.bridge.from_bus, pattern.bridge.to_bus],
                "q_pendant": pattern.q_pendant,
            },
            "complete": analysis.complete,
            "conic_solves": analysis.search.conic_solves,
            "curves": [
                self._curve_record(i, c, c.assemble(0.0), a)
                for i, (c, a) in enumerate(zip(analysis.curves,
                                               analysis.annotations))
            ],
        }

    @staticmethod
    def _curve_record(index: int, curve: SolutionCurve,
                      full: PolarSolution,
                      annotation: PracticalityAnnotation) -> dict[str, Any]:
        """JSON record of one curve."""
        samples = []
        for theta in curve.thetas:
            samples.append({
                "theta_deg": math.degrees(float(theta)),
                "e": curve.pendant_v * math.cos(float(theta)),
                "f": curve.pendant_v * math.sin(float(theta)),
                "residual": curve.residual_at(float(theta)),
            })
        return {
            "index": index + 1,
            "s2_solution": {"buses": _bus_rows(curve.s2_solution)},
            "assembly": {
                "zero_bus": curve.zero_bus,
                "pendant_bus": curve.free_angle_bus,
                "pendant_v": curve.pendant_v,
                "rule": "e_z = f_z = 0; e_p = v cos(theta); "
                        "f_p = v sin(theta)",
            },
            "q_pendant": curve.q_pendant,
            "max_residual": curve.max_residual,
            "theta_samples": samples,
            "solution": {"buses": _bus_rows(full)},
            "practicality": {
                "violations": [
                    {"kind": v.kind.value, "subject": v.subject,
                     "value": v.value, "limit": v.limit}
                    for v in annotation.violations
                ],
                "unchecked": [k.value for k in annotation.unchecked],
            },
        }


def _magnitude(text: Any) -> float:
    """Parse a supplied |V|, finite and non-negative.

    Raises:
        ValueError: On anything else.
    """
    value = float(text)
    if not math.isfinite(value) or value < 0:
        raise ValueError(f"magnitude {text!r} must be finite and >= 0")
    return value


def _solution_from_rows(case: NetworkCase,
                        rows: dict[int, tuple[float, float | None]],
                        where: str) -> PolarSolution:
    """Order per-bus (vm, va_deg) records along the case buses."""
    missing = [b for b in case.bus_ids if b not in rows]
    if missing:
        raise CaseParseError(f"{where}: no values for buses "
                             f"{', '.join(map(str, missing))}")
    v_mag = np.array([rows[b][0] for b in case.bus_ids])
    theta = np.array([
        np.nan if rows[b][1] is None else math.radians(rows[b][1])
        for b in case.bus_ids
    ])
    try:
        return PolarSolution(case.bus_ids, v_mag, theta)
    except ValueError as e:
        raise CaseParseError(f"{where}: {e}") from None


def _json_entries(data: dict[str, Any]) -> list[Any]:
    """Solution records of a newton, enumerate or continuum JSON file."""
    if "solutions" in data:
        entries = data["solutions"]
        if not isinstance(entries, list):
            raise CaseParseError("'solutions' must be a list")
        return entries
    analyses = data.get("analyses")
    if not isinstance(analyses, list):
        raise CaseParseError("expected a 'solutions' or 'analyses' list")
    entries = []
    for k, analysis in enumerate(analyses):
        curves = analysis.get("curves") if isinstance(analysis, dict) \
            else None
        if not isinstance(curves, list):
            raise CaseParseError(f"analysis {k + 1}: 'curves' must be a "
                                 "list")
        entries += [c.get("solution") if isinstance(c, dict) else None
                    for c in curves]
    return entries


def _read_json(case: NetworkCase, text: str) -> list[PolarSolution]:
    """Solutions of a JSON file written by this tool."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise CaseParseError(e.msg, e.lineno) from None
    if not isinstance(data, dict):
        raise CaseParseError("solution file must hold a JSON object")
    solutions = []
    for i, entry in enumerate(_json_entries(data)):
        try:
            rows = {int(r["bus"]): (_magnitude(r["vm"]),
                                    None if r.get("va_deg") is None
                                    else float(r["va_deg"]))
                    for r in entry["buses"]}
        except (AttributeError, KeyError, TypeError, ValueError) as e:
            raise CaseParseError(f"solution {i + 1}: bad record ({e})") \
                from None
        solutions.append(_solution_from_rows(case, rows,
                                             f"solution {i + 1}"))
    return solutions


def _read_csv(case: NetworkCase, text: str) -> list[PolarSolution]:
    """Solutions of a CSV in the `bus,vm_1..vm_k,va_1..va_k` layout."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header or header[0].strip() != "bus" or len(header) % 2 == 0:
        raise CaseParseError("expected header bus,vm_1..vm_k,va_1..va_k", 1)
    k = (len(header) - 1) // 2
    columns: list[dict[int, tuple[float, float | None]]] = [
        {} for _ in range(k)
    ]
    for line_num, row in enumerate(reader, start=2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != len(header):
            raise CaseParseError(f"expected {len(header)} fields", line_num)
        try:
            bus_id = int(row[0])
            for j in range(k):
                va = row[1 + k + j].strip()
                columns[j][bus_id] = (
                    _magnitude(row[1 + j]),
                    None if va in (UNDEFINED, "") else float(va),
                )
        except ValueError as e:
            raise CaseParseError(f"bad field ({e})", line_num) from None
    return [_solution_from_rows(case, col, f"column {j + 1}")
            for j, col in enumerate(columns)]


def read_solutions(path: str | Path, case: NetworkCase
                   ) -> list[PolarSolution]:
    """Read supplied solutions for verification.

    Args:
        path: JSON file written by this tool, or a CSV in Table layout.
        case: Case giving the bus order.

    Returns:
        One polar solution per column or record.

    Raises:
        CaseParseError: On malformed content or missing buses.
        OSError: If the file cannot be read.
    """
    try:
        text = Path(path).read_text()
    except UnicodeDecodeError as e:
        raise CaseParseError(f"{path} is not text ({e.reason})") from None
    if text.lstrip().startswith("{"):
        return _read_json(case, text)
    return _read_csv(case, text)
