"""Case file parsing: a MATPOWER subset and a native JSON schema."""

import json
import logging
import math
from importlib import resources
from pathlib import Path
from typing import Any

from pfmulti.bus import BranchParams, BusKind, BusSpec
from pfmulti.errors import CaseParseError, CaseValidationError
from pfmulti.network_case import NetworkCase

logger = logging.getLogger(__name__)

# MATPOWER column positions
BUS_I, BUS_TYPE, PD, QD, GS, BS = 0, 1, 2, 3, 4, 5
VM, VA, VMAX, VMIN = 7, 8, 11, 12
GEN_BUS, PG, QG, QMAX, QMIN, VG, GEN_STATUS = 0, 1, 2, 3, 4, 5, 7
F_BUS, T_BUS, BR_R, BR_X, BR_B, RATE_A = 0, 1, 2, 3, 4, 5
TAP, SHIFT, BR_STATUS = 8, 9, 10

Row = tuple[int, list[float]]


class MatpowerParser:
    """Parse the numeric-table subset of a MATPOWER .m case.

    Accepted statements: `function mpc = name`, `mpc.version = '2';`,
    `mpc.baseMVA = <number>;` and the `mpc.bus`, `mpc.gen` and
    `mpc.branch` matrices. Anything else is rejected.
    """

    tables: dict[str, int] = {"bus": 13, "gen": 10, "branch": 11}

    @staticmethod
    def parse_row(chunk: str, line_num: int) -> list[float]:
        """Parse one whitespace or comma separated matrix row.

        Args:
            chunk: Row text without the terminating ';'.
            line_num: Line number for error messages.

        Returns:
            Row values.

        Raises:
            CaseParseError: If a token is not a number.
        """
        tokens = chunk.replace(",", " ").split()
        try:
            return [float(token) for token in tokens]
        except ValueError:
            raise CaseParseError(f"non-numeric value in '{chunk.strip()}'",
                                 line_num) from None

    def parse_text(self, text: str) -> dict[str, Any]:
        """Split the case text into scalar fields and raw tables.

        Args:
            text: Case file content.

        Returns:
            Dictionary with `name`, `baseMVA` and one list of
            (line, row) pairs per table.

        Raises:
            CaseParseError: On any unsupported or malformed statement.
        """
        raw: dict[str, Any] = {"name": "case", "baseMVA": None}
        current: str | None = None

        for line_num, line in enumerate(text.splitlines(), start=1):
            stripped = line.split("%", 1)[0].strip()
            if not stripped:
                continue

            # Inside a matrix: collect rows until ']'
            if current is not None:
                body, closed = stripped, False
                if "]" in body:
                    body, rest = body.split("]", 1)
                    if rest.strip() not in ("", ";"):
                        raise CaseParseError(
                            f"unexpected text after ']': '{rest.strip()}'",
                            line_num)
                    closed = True
                for chunk in body.split(";"):
                    if chunk.strip():
                        raw[current].append(
                            (line_num, self.parse_row(chunk, line_num)))
                if closed:
                    current = None
                continue

            if stripped.startswith("function"):
                parts = stripped.split("=", 1)
                if len(parts) != 2 or parts[0].split()[-1] != "mpc":
                    raise CaseParseError("expected 'function mpc = name'",
                                         line_num)
                raw["name"] = parts[1].strip().rstrip(";") or "case"
                continue

            if "=" not in stripped or not stripped.startswith("mpc."):
                raise CaseParseError(f"unsupported statement '{stripped}'",
                                     line_num)

            key, value = stripped.split("=", 1)
            key = key.strip()[len("mpc."):]
            value = value.strip()

            if key == "version":
                if value.rstrip(";").strip().strip("'\"") != "2":
                    raise CaseParseError("only case format version 2 is "
                                         "supported", line_num)
            elif key == "baseMVA":
                try:
                    raw["baseMVA"] = float(value.rstrip(";"))
                except ValueError:
                    raise CaseParseError(f"invalid baseMVA '{value}'",
                                         line_num) from None
                if not math.isfinite(raw["baseMVA"]) or raw["baseMVA"] <= 0:
                    raise CaseParseError("baseMVA must be positive",
                                         line_num)
            elif key in self.tables:
                if not value.startswith("["):
                    raise CaseParseError(f"mpc.{key} must be a matrix",
                                         line_num)
                if key in raw:
                    raise CaseParseError(f"mpc.{key} defined twice", line_num)
                raw[key] = []
                current = key
                rest = value[1:]
                if rest.strip():
                    body, closed = rest, False
                    if "]" in body:
                        body = body.split("]", 1)[0]
                        closed = True
                    for chunk in body.split(";"):
                        if chunk.strip():
                            raw[key].append(
                                (line_num, self.parse_row(chunk, line_num)))
                    if closed:
                        current = None
            else:
                raise CaseParseError(f"unsupported field 'mpc.{key}'",
                                     line_num)

        if current is not None:
            raise CaseParseError(f"unterminated matrix mpc.{current}")
        if raw["baseMVA"] is None:
            raise CaseParseError("missing mpc.baseMVA")
        for key, width in self.tables.items():
            if key not in raw:
                raise CaseParseError(f"missing mpc.{key}")
            for line_num, row in raw[key]:
                if len(row) < width:
                    raise CaseParseError(
                        f"mpc.{key} row has {len(row)} columns, "
                        f"expected at least {width}", line_num)
        return raw

    def convert_tables(self, raw: dict[str, Any]) -> NetworkCase:
        """Convert raw tables into a validated case in p.u.

        Generators at one bus are merged by summation before typing.

        Args:
            raw: Output of `parse_text`.

        Returns:
            The network case.

        Raises:
            CaseParseError: On unsupported row content.
            CaseValidationError: On invariant violations.
        """
        base = float(raw["baseMVA"])

        # Merge generators per bus
        gens: dict[int, dict[str, float]] = {}
        for line_num, row in raw["gen"]:
            if row[GEN_STATUS] <= 0:
                continue
            bus_id = int(row[GEN_BUS])
            merged = gens.setdefault(bus_id, {
                "pg": 0.0, "qg": 0.0, "qmax": 0.0, "qmin": 0.0,
                "vg": row[VG], "line": line_num,
            })
            if not math.isclose(merged["vg"], row[VG]):
                logger.warning("bus %d: generators disagree on Vg, "
                               "keeping %.4f", bus_id, merged["vg"])
            merged["pg"] += row[PG]
            merged["qg"] += row[QG]
            merged["qmax"] += row[QMAX]
            merged["qmin"] += row[QMIN]

        bus_lines = {int(row[BUS_I]): ln for ln, row in raw["bus"]}
        for bus_id, gen in gens.items():
            if bus_id not in bus_lines:
                raise CaseParseError(f"generator at unknown bus {bus_id}",
                                     int(gen["line"]))

        buses: list[BusSpec] = []
        for line_num, row in raw["bus"]:
            bus_id = int(row[BUS_I])
            try:
                kind = BusKind.from_code(int(row[BUS_TYPE]))
            except ValueError as e:
                raise CaseParseError(str(e), line_num) from None
            gen = gens.get(bus_id)
            p_load = row[PD] / base
            q_load = row[QD] / base
            fields: dict[str, Any] = {
                "g_shunt": row[GS] / base,
                "b_shunt": row[BS] / base,
                "v_max": row[VMAX] if row[VMAX] > 0 else None,
                "v_min": row[VMIN] if row[VMIN] > 0 else None,
            }

            if kind is BusKind.PV and gen is None:
                logger.warning("bus %d: PV bus without generator, treated "
                               "as PQ", bus_id)
                kind = BusKind.PQ
            if kind is BusKind.PQ and gen is not None:
                logger.warning("bus %d: generator at PQ bus folded into "
                               "load", bus_id)
                p_load -= gen["pg"] / base
                q_load -= gen["qg"] / base
                gen = None

            if gen is not None:
                fields["q_max"] = gen["qmax"] / base
                fields["q_min"] = gen["qmin"] / base
            if kind is BusKind.PV:
                assert gen is not None
                fields["v_set"] = gen["vg"]
                fields["p_gen"] = gen["pg"] / base
            elif kind is BusKind.SLACK:
                fields["v_set"] = gen["vg"] if gen is not None else row[VM]
                fields["theta_set"] = math.radians(row[VA])

            try:
                buses.append(BusSpec(bus_id, kind, p_load, q_load, **fields))
            except CaseValidationError as e:
                raise CaseParseError(str(e), line_num) from None

        branches: list[BranchParams] = []
        for line_num, row in raw["branch"]:
            if row[BR_STATUS] <= 0:
                continue
            if row[SHIFT] != 0.0:
                raise CaseParseError("phase shifting transformers are not "
                                     "supported", line_num)
            z = complex(row[BR_R], row[BR_X])
            if z == 0:
                raise CaseParseError("branch with zero impedance", line_num)
            y = 1.0 / z
            try:
                branches.append(BranchParams(
                    from_bus=int(row[F_BUS]),
                    to_bus=int(row[T_BUS]),
                    series_g=y.real,
                    series_b=y.imag,
                    charging_b=row[BR_B],
                    tap_ratio=row[TAP] if row[TAP] != 0.0 else 1.0,
                    rate_mva=row[RATE_A] if row[RATE_A] > 0 else None,
                ))
            except CaseValidationError as e:
                raise CaseParseError(str(e), line_num) from None

        return NetworkCase(tuple(buses), tuple(branches), base, raw["name"])


def _json_field(entry: dict[str, Any], key: str, where: str,
                required: bool = True) -> Any:
    """Fetch one field of a JSON case entry.

    Args:
        entry: JSON object.
        key: Field name.
        where: Path of the entry for error messages.
        required: Whether a missing or null field is an error.

    Returns:
        The field value, or None when optional and absent.

    Raises:
        CaseParseError: If a required field is missing.
    """
    value = entry.get(key)
    if value is None and required:
        raise CaseParseError(f"{where}: missing field '{key}'")
    return value


def _optional_scaled(value: Any, scale: float) -> float | None:
    """Scale an optional JSON number."""
    return None if value is None else float(value) * scale


def _json_list(doc: dict[str, Any], key: str) -> list[Any]:
    """Fetch a top-level list of the JSON case."""
    value = _json_field(doc, key, "case")
    if not isinstance(value, list):
        raise CaseParseError(f"case: field '{key}' must be a list")
    return value


def _json_entry(value: Any, where: str) -> dict[str, Any]:
    """Check that a bus or branch entry is a JSON object."""
    if not isinstance(value, dict):
        raise CaseParseError(f"{where}: expected an object, got "
                             f"{type(value).__name__}")
    return value


def parse_json_case(text: str) -> NetworkCase:
    """Parse the native JSON case schema.

    Powers are in MW/MVar and angles in degrees, as in Table-style input.

    Args:
        text: JSON document.

    Returns:
        The network case.

    Raises:
        CaseParseError: On JSON syntax or schema errors; schema errors
            name the offending field path.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise CaseParseError(e.msg, e.lineno) from None
    if not isinstance(doc, dict):
        raise CaseParseError("top-level JSON value must be an object")

    try:
        base = float(_json_field(doc, "base_mva", "case"))
    except (TypeError, ValueError):
        raise CaseParseError(f"case: base_mva '{doc.get('base_mva')}' is "
                             "not a number") from None
    if not math.isfinite(base) or base <= 0:
        raise CaseParseError(f"case: base_mva must be positive, got {base}")

    buses: list[BusSpec] = []
    for pos, value in enumerate(_json_list(doc, "buses")):
        where = f"buses[{pos}]"
        entry = _json_entry(value, where)
        try:
            kind = BusKind[str(_json_field(entry, "kind", where)).upper()]
        except KeyError:
            raise CaseParseError(f"{where}: unknown kind "
                                 f"'{entry.get('kind')}'") from None
        theta = entry.get("theta_set_deg")
        try:
            buses.append(BusSpec(
                id=int(_json_field(entry, "id", where)),
                kind=kind,
                p_load=float(entry.get("p_load_mw", 0.0)) / base,
                q_load=float(entry.get("q_load_mvar", 0.0)) / base,
                v_set=entry.get("v_set"),
                theta_set=None if theta is None else math.radians(theta),
                p_gen=_optional_scaled(entry.get("p_gen_mw"), 1.0 / base),
                g_shunt=float(entry.get("g_shunt_mw", 0.0)) / base,
                b_shunt=float(entry.get("b_shunt_mvar", 0.0)) / base,
                v_min=entry.get("v_min"),
                v_max=entry.get("v_max"),
                q_min=_optional_scaled(entry.get("q_min_mvar"), 1.0 / base),
                q_max=_optional_scaled(entry.get("q_max_mvar"), 1.0 / base),
            ))
        except (TypeError, ValueError) as e:
            raise CaseParseError(f"{where}: {e}") from None

    branches: list[BranchParams] = []
    for pos, value in enumerate(_json_list(doc, "branches")):
        where = f"branches[{pos}]"
        entry = _json_entry(value, where)
        try:
            branches.append(BranchParams(
                from_bus=int(_json_field(entry, "from_bus", where)),
                to_bus=int(_json_field(entry, "to_bus", where)),
                series_g=float(_json_field(entry, "series_g", where)),
                series_b=float(_json_field(entry, "series_b", where)),
                charging_b=float(entry.get("charging_b", 0.0)),
                tap_ratio=float(entry.get("tap_ratio", 1.0)),
                rate_mva=entry.get("rate_mva"),
            ))
        except (TypeError, ValueError) as e:
            raise CaseParseError(f"{where}: {e}") from None

    return NetworkCase(tuple(buses), tuple(branches), base,
                       str(doc.get("name", "case")))


def parse_case(text: str) -> NetworkCase:
    """Parse case content, MATPOWER subset or JSON.

    Args:
        text: Case file content.

    Returns:
        The validated network case.

    Raises:
        CaseParseError: On malformed content.
        CaseValidationError: On network invariant violations.
    """
    if text.lstrip().startswith("{"):
        return parse_json_case(text)
    parser = MatpowerParser()
    return parser.convert_tables(parser.parse_text(text))


def load_case(path: str | Path) -> NetworkCase:
    """Read and parse a case file.

    Args:
        path: File path, or the name of a bundled case such as `case14`.

    Returns:
        The network case.

    Raises:
        CaseParseError: If the file is not UTF-8 text or is malformed.
        OSError: If the file cannot be read.
    """
    file_path = Path(path)
    if not file_path.exists() and file_path.suffix == "":
        return bundled_case(str(path))
    try:
        text = file_path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise CaseParseError(f"not UTF-8 text ({e.reason})") from None
    return parse_case(text)


def bundled_case(name: str) -> NetworkCase:
    """Load a case shipped with the package.

    Args:
        name: File stem under `pfmulti/cases` (e.g. `case14`).

    Returns:
        The network case.
    """
    ref = resources.files("pfmulti").joinpath("cases")
    return parse_case(ref.joinpath(f"{name}.m").read_text(encoding="utf-8"))


def serialize_case(case: NetworkCase) -> str:
    """Write a case in the JSON schema accepted by `parse_case`.

    Args:
        case: Network case.

    Returns:
        JSON text with stable key order.
    """
    base = case.base_mva

    def scaled(value: float | None) -> float | None:
        return None if value is None else value * base

    buses = []
    for bus in case.buses:
        buses.append({
            "id": bus.id,
            "kind": bus.kind.label,
            "p_load_mw": bus.p_load * base,
            "q_load_mvar": bus.q_load * base,
            "v_set": bus.v_set,
            "theta_set_deg": (None if bus.theta_set is None
                              else math.degrees(bus.theta_set)),
            "p_gen_mw": scaled(bus.p_gen),
            "g_shunt_mw": bus.g_shunt * base,
            "b_shunt_mvar": bus.b_shunt * base,
            "v_min": bus.v_min,
            "v_max": bus.v_max,
            "q_min_mvar": scaled(bus.q_min),
            "q_max_mvar": scaled(bus.q_max),
        })
    branches = [{
        "from_bus": br.from_bus,
        "to_bus": br.to_bus,
        "series_g": br.series_g,
        "series_b": br.series_b,
        "charging_b": br.charging_b,
        "tap_ratio": br.tap_ratio,
        "rate_mva": br.rate_mva,
    } for br in case.branches]
    doc = {"name": case.name, "base_mva": base, "buses": buses,
           "branches": branches}
    return json.dumps(doc, indent=2)
