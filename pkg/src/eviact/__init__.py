"""eviact: evidence-gated automated program repair.

A repository is indexed into structural spans and a typed code graph; failing
test output becomes ranked repair suspects; candidate patches pass a compile
gate before the originally failing tests are re-run, and a patch is accepted
only after full regression also passes. All model interaction sits behind a
pluggable agent adapter so runs can be replayed from transcripts.
"""

from .config import RepairConfig, load_config
from .controller import Budget, RunState, mediate, run_repair, should_relocalize
from .evidence import RedEvidence, StackFrame, parse_failure_log, run_red
from .index import Edge, Index, LanguageConfig, Span, build_index, compress_spans, parse_spans
from .patching import EditSet, GateResult, apply_edits, check_compile, compile_gate, parse_candidate
from .report import MetricsSummary, RunReport, compute_metrics, emit_report
from .runner import RunnerConfig
from .scaffold import (
    ExpansionBudget,
    ScoredCandidate,
    SuspectSet,
    expand,
    localize,
    match_seeds,
    rank,
)
from .verify import VerifyOutcome, run_green, run_regression, td_gate

__version__ = "0.1.0"

__all__ = [
    "Budget",
    "Edge",
    "EditSet",
    "ExpansionBudget",
    "GateResult",
    "Index",
    "LanguageConfig",
    "MetricsSummary",
    "RedEvidence",
    "RepairConfig",
    "RunReport",
    "RunState",
    "RunnerConfig",
    "ScoredCandidate",
    "Span",
    "StackFrame",
    "SuspectSet",
    "VerifyOutcome",
    "apply_edits",
    "build_index",
    "check_compile",
    "compile_gate",
    "compress_spans",
    "compute_metrics",
    "emit_report",
    "expand",
    "localize",
    "match_seeds",
    "mediate",
    "parse_candidate",
    "parse_failure_log",
    "parse_spans",
    "rank",
    "run_green",
    "run_red",
    "run_regression",
    "run_repair",
    "should_relocalize",
    "td_gate",
]
