"""Command-line front end: parse, build, search, analyse, report."""

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any, NoReturn

from pfmulti.case_parser import load_case
from pfmulti.config_parser import (
    FORMATS,
    LIFTS,
    MODES,
    ConfigParser,
    RunConfig,
)
from pfmulti.continuum import (
    analyse_pattern,
    detect_patterns,
    limits_from_case,
)
from pfmulti.enumerator import EnumerationConfig, enumerate_solutions
from pfmulti.errors import (
    CaseParseError,
    CaseValidationError,
    ConfigError,
    CurveAssemblyError,
    DecompositionError,
    PreconditionError,
)
from pfmulti.network_case import NetworkCase
from pfmulti.pf_equations import (
    check_solution,
    flat_start,
    newton_refine,
    residuals,
)
from pfmulti.qcpf import build_qcpf, dump_qcpf
from pfmulti.relaxation import build_relaxation, dump_standard_form
from pfmulti.report import ReportWriter, read_solutions

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVALID = 2
EXIT_BUDGET = 3
EXIT_VERIFY = 4


class _ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors raised instead of exiting with 2."""

    def error(self, message: str) -> NoReturn:
        """Raise a ConfigError carrying the usage message."""
        raise ConfigError(message)


def build_arg_parser() -> argparse.ArgumentParser:
    """Create the command-line parser."""
    parser = _ArgumentParser(
        prog="pf-multi",
        description="Enumerate power-flow solutions and solution curves.",
    )
    parser.add_argument("--config", help="KEY=VALUE run configuration file")
    parser.add_argument("--case", help="case file or bundled case name")
    parser.add_argument("--mode", choices=MODES)
    parser.add_argument("--vmax", type=float,
                        help="magnitude cap of the initial box, p.u.")
    parser.add_argument("--eps-s", dest="eps_s", type=float,
                        help="zero threshold of the relaxation objective")
    parser.add_argument("--budget", type=int, help="conic solve budget")
    parser.add_argument("--theta-samples", dest="theta_samples", type=int,
                        help="pendant angles verified per curve")
    parser.add_argument("--format", dest="output_format", choices=FORMATS)
    parser.add_argument("--out", help="output file (default stdout)")
    parser.add_argument("--solutions", help="solutions file for verify")
    parser.add_argument("--workers", type=int)
    parser.add_argument("--obbt-passes", dest="obbt_passes", type=int)
    parser.add_argument("--lift", choices=LIFTS)
    parser.add_argument("--pendant-v", dest="pendant_v", type=float,
                        help="override the pendant magnitude of curves")
    parser.add_argument("--solver", help="cvxpy conic solver name")
    parser.add_argument("--tol", dest="verify_tol", type=float,
                        help="verify tolerance (default 1e-3)")
    parser.add_argument("--dump", help="write the program dumps here")
    parser.add_argument("--log-file", dest="log_file")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _emit(config: RunConfig, text: str) -> None:
    """Write results to the output file or stdout."""
    if config.out:
        Path(config.out).write_text(text)
        logger.info("results written to %s", config.out)
    else:
        sys.stdout.write(text)


def _enumeration_config(config: RunConfig) -> EnumerationConfig:
    """Search tunables of a run."""
    return EnumerationConfig(
        eps_s=config.eps_s,
        budget=config.budget,
        obbt_passes=config.obbt_passes,
        workers=config.workers,
        bordered=config.bordered,
        solver=config.solver,
    )


def _dump(path: str, case: NetworkCase, config: RunConfig) -> None:
    """Write the quadratic program and its relaxation dump."""
    problem = build_qcpf(case, config.vmax)
    program = build_relaxation(problem, problem.bounds, config.bordered,
                               config.solver)
    Path(path).write_text(dump_qcpf(problem) + dump_standard_form(program))
    logger.info("program dump written to %s", path)


def _run_newton(config: RunConfig, case: NetworkCase) -> int:
    """Solve the operating point from a flat start."""
    result = newton_refine(case, flat_start(case))
    if not result.converged or result.solution is None:
        print(f"Error: Newton did not converge ({result.status.value}, "
              f"residual {result.residual_norm:.3e})", file=sys.stderr)
        return EXIT_VERIFY
    residual = residuals(case, result.solution).norm
    writer = ReportWriter(case, config.output_format)
    _emit(config, writer.newton(result.solution, residual))
    return EXIT_OK


def _run_enumerate(config: RunConfig, case: NetworkCase) -> int:
    """Enumerate the isolated solutions of the case."""
    problem = build_qcpf(case, config.vmax)
    result = enumerate_solutions(problem, config=_enumeration_config(config))
    _emit(config, ReportWriter(case, config.output_format)
          .solution_set(result))
    return EXIT_OK if result.complete else EXIT_BUDGET


def _run_continuum(config: RunConfig, case: NetworkCase) -> int:
    """Analyse every zero-bus pattern of the case."""
    patterns = detect_patterns(case)
    if not patterns:
        print(f"no continuum pattern in {case.name}")
        return EXIT_OK
    limits = limits_from_case(case)
    analyses = []
    for k, pattern in enumerate(patterns):
        logger.info("pattern %d/%d: zero bus %d, pendant bus %d", k + 1,
                    len(patterns), pattern.zero_bus, pattern.pendant_bus)
        analyses.append(analyse_pattern(
            case, pattern, config.vmax, _enumeration_config(config),
            config.theta_samples, config.pendant_v, limits))
    _emit(config, ReportWriter(case, config.output_format)
          .continuum(analyses))
    return EXIT_OK if all(a.complete for a in analyses) else EXIT_BUDGET


def _run_verify(config: RunConfig, case: NetworkCase) -> int:
    """Recompute the residuals of a supplied solutions file."""
    assert config.solutions is not None
    solutions = read_solutions(config.solutions, case)
    if not solutions:
        raise CaseParseError(f"{config.solutions} holds no solutions")
    failed = 0
    lines = []
    for i, sol in enumerate(solutions):
        check = check_solution(case, sol, config.verify_tol)
        verdict = "ok" if check.passed else "FAIL"
        lines.append(f"solution {i + 1}: residual {check.residual:.3e}, "
                     f"distance {check.distance:.3e}: {verdict}")
        failed += not check.passed
    _emit(config, "\n".join(lines) + "\n")
    return EXIT_OK if not failed else EXIT_VERIFY


def run(config: RunConfig, dump: str | None = None) -> int:
    """Execute one run.

    Args:
        config: Validated run configuration.
        dump: Optional path receiving the program dumps.

    Returns:
        Exit status: 0 success, 1 usage, 2 parse or validation error,
        3 budget exhausted (results still written), 4 verification
        failure.
    """
    try:
        case = load_case(config.case)
    except (CaseParseError, CaseValidationError) as e:
        print(f"Error: {config.case}: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE

    handlers = {
        "newton": _run_newton,
        "enumerate": _run_enumerate,
        "continuum": _run_continuum,
        "verify": _run_verify,
    }
    try:
        if dump:
            _dump(dump, case, config)
        return handlers[config.mode](config, case)
    except (CaseParseError, CaseValidationError, PreconditionError,
            DecompositionError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except CurveAssemblyError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_VERIFY
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE


def main(argv: Sequence[str] | None = None) -> int:
    """Parse arguments, configure logging and run.

    Args:
        argv: Arguments without the program name, sys.argv when None.

    Returns:
        The exit status.
    """
    parser = build_arg_parser()
    try:
        args = parser.parse_args(argv)
        values: dict[str, Any] = {}
        if args.config:
            values.update(ConfigParser().parse_config(args.config))
        overrides = dict(vars(args))
        for key in ("config", "dump", "log_file", "verbose"):
            overrides.pop(key)
        values.update({k: v for k, v in overrides.items() if v is not None})
        config = ConfigParser.build(values)
    except ConfigError as e:
        print(f"Error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        filename=args.log_file,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    return run(config, args.dump)
