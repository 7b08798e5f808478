"""Run configuration: KEY=VALUE file parsing and the validated RunConfig."""

from dataclasses import dataclass, fields
from typing import Any

from pfmulti.errors import ConfigError

MODES = ("newton", "enumerate", "continuum", "verify")
FORMATS = ("table", "json", "csv")
LIFTS = ("bordered", "plain")


@dataclass(frozen=True)
class RunConfig:
    """Everything one run needs.

    Attributes:
        case: Case file path or bundled case name.
        mode: newton, enumerate, continuum or verify.
        vmax: Magnitude cap of the initial box, derived when None.
        eps_s: Zero threshold of the relaxation objective.
        budget: Conic solve budget of the enumeration.
        theta_samples: Pendant angles checked per curve.
        output_format: table, json or csv.
        out: Output file, stdout when None.
        solutions: Solutions file checked by verify mode.
        workers: Nodes evaluated concurrently.
        obbt_passes: Bound-tightening passes per node.
        lift: bordered or plain PSD lift.
        pendant_v: Pendant magnitude override for curves.
        solver: cvxpy solver name.
        verify_tol: Acceptance tolerance of verify mode.
        deterministic: Always True; reserved.
    """

    case: str
    mode: str
    vmax: float | None = None
    eps_s: float = 1e-6
    budget: int = 20000
    theta_samples: int = 24
    output_format: str = "table"
    out: str | None = None
    solutions: str | None = None
    workers: int = 1
    obbt_passes: int = 1
    lift: str = "bordered"
    pendant_v: float | None = None
    solver: str = "CLARABEL"
    verify_tol: float = 1e-3
    deterministic: bool = True

    def __post_init__(self) -> None:
        """Validate the field combination.

        Raises:
            ConfigError: On an unknown choice, a non-positive tolerance or
                count, or verify mode without a solutions file.
        """
        if not self.case:
            raise ConfigError("CASE must not be empty")
        if self.mode not in MODES:
            raise ConfigError(f"MODE must be one of {', '.join(MODES)}")
        if self.output_format not in FORMATS:
            raise ConfigError(f"FORMAT must be one of {', '.join(FORMATS)}")
        if self.lift not in LIFTS:
            raise ConfigError(f"LIFT must be one of {', '.join(LIFTS)}")
        for name in ("eps_s", "verify_tol"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name.upper()} must be positive")
        for name in ("vmax", "pendant_v"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ConfigError(f"{name.upper()} must be positive")
        for name in ("budget", "theta_samples", "workers"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name.upper()} must be a positive "
                                  "integer")
        if self.obbt_passes < 0:
            raise ConfigError("OBBT_PASSES must be non-negative")
        if self.mode == "verify" and not self.solutions:
            raise ConfigError("MODE=verify requires SOLUTIONS")
        if not self.deterministic:
            raise ConfigError("runs are always deterministic")

    @property
    def bordered(self) -> bool:
        """Whether the PSD cone sits on the bordered matrix."""
        return self.lift == "bordered"


class ConfigParser:
    """Parse and validate a run configuration file."""

    required_keys: set[str] = {"CASE", "MODE"}

    # config key -> (RunConfig field, converter)
    conversions: dict[str, tuple[str, Any]] = {
        "CASE": ("case", str),
        "MODE": ("mode", str.lower),
        "VMAX": ("vmax", float),
        "EPS_S": ("eps_s", float),
        "BUDGET": ("budget", int),
        "THETA_SAMPLES": ("theta_samples", int),
        "FORMAT": ("output_format", str.lower),
        "OUT": ("out", str),
        "SOLUTIONS": ("solutions", str),
        "WORKERS": ("workers", int),
        "OBBT_PASSES": ("obbt_passes", int),
        "LIFT": ("lift", str.lower),
        "PENDANT_V": ("pendant_v", float),
        "SOLVER": ("solver", str.upper),
        "VERIFY_TOL": ("verify_tol", float),
    }

    def convert_values(self, raw: dict[str, str],
                       lines: dict[str, int] | None = None
                       ) -> dict[str, Any]:
        """Convert raw string values to RunConfig keyword arguments.

        Args:
            raw: Raw key-value string pairs.
            lines: Line number of each key, for error messages.

        Returns:
            Keyword arguments; empty values are left out.

        Raises:
            ConfigError: On an unknown key or a value of the wrong type.
        """
        lines = lines or {}
        values: dict[str, Any] = {}
        for key, text in raw.items():
            if key not in self.conversions:
                raise ConfigError(f"unknown key '{key}'", lines.get(key))
            if not text:
                continue
            name, convert = self.conversions[key]
            try:
                values[name] = convert(text)
            except ValueError:
                raise ConfigError(f"invalid value '{text}' for {key}",
                                  lines.get(key)) from None
        return values

    def parse_config(self, filepath: str) -> dict[str, Any]:
        """Parse a configuration file.

        Args:
            filepath: Path to the configuration file.

        Returns:
            RunConfig keyword arguments.

        Raises:
            ConfigError: On unreadable files, syntax errors or missing
                required keys.
        """
        try:
            with open(filepath, "r") as file:
                text_lines = file.readlines()
        except OSError as e:
            raise ConfigError(f"cannot read {filepath}: {e}") from None

        raw: dict[str, str] = {}
        lines: dict[str, int] = {}
        for line_num, line in enumerate(text_lines, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"invalid syntax '{stripped}'", line_num)

            key, value = stripped.split("=", 1)
            key = key.strip()
            if not key:
                raise ConfigError("missing key", line_num)
            raw[key] = value.strip()
            lines[key] = line_num

        missing = self.required_keys - raw.keys()
        if missing:
            raise ConfigError(
                f"missing required keys: {', '.join(sorted(missing))}"
            )
        return self.convert_values(raw, lines)

    @staticmethod
    def build(values: dict[str, Any]) -> RunConfig:
        """Create a RunConfig from keyword arguments.

        Raises:
            ConfigError: If a required field is missing or invalid.
        """
        known = {f.name for f in fields(RunConfig)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(
                f"unknown settings: {', '.join(sorted(unknown))}"
            )
        for name in ("case", "mode"):
            if not values.get(name):
                raise ConfigError(f"{name.upper()} is required")
        return RunConfig(**values)
