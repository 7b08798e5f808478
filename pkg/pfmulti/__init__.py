"""Power-flow multi-solution engine."""

from pfmulti.bus import BranchParams, BusKind, BusSpec
from pfmulti.case_parser import (
    MatpowerParser,
    bundled_case,
    load_case,
    parse_case,
    serialize_case,
)
from pfmulti.config_parser import ConfigParser, RunConfig
from pfmulti.continuum import (
    ContinuumAnalysis,
    ContinuumPattern,
    OperatingLimits,
    SolutionCurve,
    SubsystemDecomposition,
    analyse_pattern,
    build_curves,
    decompose,
    detect_patterns,
    limits_from_case,
    practicality_filter,
)
from pfmulti.enumerator import (
    EnumerationConfig,
    SolutionSet,
    classify_suspect,
    dedup,
    enumerate_solutions,
)
from pfmulti.network_case import NetworkCase, build_ybus
from pfmulti.pf_equations import (
    PolarSolution,
    branch_flows,
    newton_refine,
    newton_starts,
    residuals,
)
from pfmulti.qcpf import BoxBounds, QcpfProblem, build_qcpf, eval_violation
from pfmulti.relaxation import (
    RelaxationResult,
    build_relaxation,
    obbt_tighten,
    solve_relaxation,
)

__all__ = [
    "BranchParams",
    "BusKind",
    "BusSpec",
    "MatpowerParser",
    "bundled_case",
    "load_case",
    "parse_case",
    "serialize_case",
    "ConfigParser",
    "RunConfig",
    "ContinuumPattern",
    "OperatingLimits",
    "SolutionCurve",
    "SubsystemDecomposition",
    "ContinuumAnalysis",
    "analyse_pattern",
    "build_curves",
    "decompose",
    "detect_patterns",
    "limits_from_case",
    "practicality_filter",
    "EnumerationConfig",
    "SolutionSet",
    "classify_suspect",
    "dedup",
    "enumerate_solutions",
    "NetworkCase",
    "build_ybus",
    "PolarSolution",
    "branch_flows",
    "newton_refine",
    "newton_starts",
    "residuals",
    "BoxBounds",
    "QcpfProblem",
    "build_qcpf",
    "eval_violation",
    "RelaxationResult",
    "build_relaxation",
    "obbt_tighten",
    "solve_relaxation",
]

__version__ = "1.0.0"
