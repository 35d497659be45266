"""RED-phase execution and failure-log parsing.

Failing-test output is turned into structured evidence: stack frames
(innermost first), the error message, assertion text when present, and every
``path:line`` reference found in the log. Parsing is total — arbitrary text
yields a possibly-empty structure, never an exception.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import RedUnexpectedlyPassed
from .runner import CommandResult, RunnerConfig, run_test_command

logger = logging.getLogger(__name__)

LOG_FORMATS = ("python-traceback", "junit-style", "generic")


@dataclass
class StackFrame:
    """One parsed stack-trace frame. At least one of file/symbol is set."""

    raw: str
    file: str | None = None
    line: int | None = None
    symbol: str | None = None
    qualified_symbol: str | None = None

    def __post_init__(self) -> None:
        if self.file is None and self.symbol is None:
            raise ValueError("frame needs at least a file or a symbol")
        if self.line is not None and self.line < 1:
            raise ValueError("frame line must be >= 1")


@dataclass
class ParsedFailure:
    """Result of parsing one failure log."""

    frames: list[StackFrame] = field(default_factory=list)
    error_message: str = ""
    assertion_text: str | None = None
    file_line_refs: list[tuple[str, int]] = field(default_factory=list)


@dataclass
class RedEvidence:
    """Parsed artifacts of the failing target tests."""

    test_ids: list[str]
    error_message: str
    frames: list[StackFrame]
    raw_log: str
    outcome: str  # failed | passed | error
    assertion_text: str | None = None
    file_line_refs: list[tuple[str, int]] = field(default_factory=list)
    per_test_outcomes: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["file_line_refs"] = [list(ref) for ref in self.file_line_refs]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RedEvidence:
        d = dict(d)
        d["frames"] = [StackFrame(**f) for f in d.get("frames", [])]
        d["file_line_refs"] = [tuple(ref) for ref in d.get("file_line_refs", [])]
        return cls(**d)


# --- log parsing --------------------------------------------------------------

_PY_FRAME = re.compile(r'^\s*File "([^"]+)", line (\d+), in (.+?)\s*$', re.MULTILINE)
_PYTEST_SHORT_FRAME = re.compile(r"^([\w./\\-]+\.py):(\d+): in (\w+)\s*$", re.MULTILINE)
_PY_ERROR_LINE = re.compile(
    r"^([A-Za-z_][\w.]*(?:Error|Exception|Failure|Failed|Warning|Exit|Interrupt))"
    r"(?::\s?(.*))?$",
    re.MULTILINE,
)
_PYTEST_E_LINE = re.compile(r"^E\s+(.*)$", re.MULTILINE)
_JAVA_FRAME = re.compile(
    r"^\s*at\s+(?:[\w$.]+/)?((?:[\w$]+\.)*)([\w$<>]+)\(([\w$.\-]+):(\d+)\)", re.MULTILINE
)
_JAVA_ERROR_LINE = re.compile(
    r"^\s*((?:[\w$]+\.)*[\w$]*(?:Error|Exception|Failure)[\w$]*)(?::\s?(.*))?$",
    re.MULTILINE,
)
_FILE_LINE_REF = re.compile(r"([\w$\-./\\]+\.[A-Za-z][A-Za-z0-9]*):(\d+)")
_ASSERTION_CLASSES = ("AssertionError", "AssertionFailedError", "ComparisonFailure")


def _all_file_line_refs(raw: str) -> list[tuple[str, int]]:
    refs: list[tuple[str, int]] = []
    seen = set()
    for m in _FILE_LINE_REF.finditer(raw):
        ref = (m.group(1), int(m.group(2)))
        if ref not in seen and ref[1] >= 1:
            seen.add(ref)
            refs.append(ref)
    return refs


def _parse_python(raw: str) -> ParsedFailure:
    frames: list[StackFrame] = []
    for m in _PY_FRAME.finditer(raw):
        symbol = m.group(3).strip()
        frames.append(StackFrame(
            raw=m.group(0),
            file=m.group(1),
            line=int(m.group(2)),
            symbol=symbol if symbol != "<module>" else None,
            qualified_symbol=None,
        ))
    for m in _PYTEST_SHORT_FRAME.finditer(raw):
        frames.append(StackFrame(
            raw=m.group(0), file=m.group(1), line=int(m.group(2)), symbol=m.group(3)
        ))
    frames.reverse()  # tracebacks print outermost first; innermost leads

    error_message = ""
    assertion_parts: list[str] = []
    matches = list(_PY_ERROR_LINE.finditer(raw))
    if matches:
        last = matches[-1]
        error_message = last.group(0).strip()
        if any(cls in last.group(1) for cls in _ASSERTION_CLASSES):
            detail = (last.group(2) or "").strip()
            if detail:
                assertion_parts.append(detail)
    assertion_parts.extend(m.group(1).strip() for m in _PYTEST_E_LINE.finditer(raw))
    return ParsedFailure(
        frames=frames,
        error_message=error_message,
        assertion_text="\n".join(assertion_parts) or None,
        file_line_refs=_all_file_line_refs(raw),
    )


def _parse_junit(raw: str) -> ParsedFailure:
    frames: list[StackFrame] = []
    for m in _JAVA_FRAME.finditer(raw):
        prefix, method, filename, line = m.group(1), m.group(2), m.group(3), int(m.group(4))
        qualified = f"{prefix}{method}" if prefix else None
        frames.append(StackFrame(
            raw=m.group(0).strip(),
            file=filename,
            line=line,
            symbol=method,
            qualified_symbol=qualified,
        ))
    # JVM traces already print innermost first; keep order.

    error_message = ""
    assertion_text = None
    m = _JAVA_ERROR_LINE.search(raw)
    if m:
        error_message = m.group(0).strip()
        cls = m.group(1)
        if any(a in cls for a in _ASSERTION_CLASSES):
            parts = [(m.group(2) or "").strip()]
            # the expected/actual message often continues on following lines
            for cont in raw[m.end():].splitlines():
                stripped = cont.strip()
                if not stripped or stripped.startswith("at "):
                    break
                parts.append(stripped)
            assertion_text = "\n".join(p for p in parts if p) or None
    return ParsedFailure(
        frames=frames,
        error_message=error_message,
        assertion_text=assertion_text,
        file_line_refs=_all_file_line_refs(raw),
    )


def _parse_generic(raw: str) -> ParsedFailure:
    frames = [
        StackFrame(raw=f"{f}:{n}", file=f, line=n)
        for f, n in _all_file_line_refs(raw)
    ]
    return ParsedFailure(
        frames=frames,
        error_message="",
        assertion_text=None,
        file_line_refs=_all_file_line_refs(raw),
    )


def parse_failure_log(raw: str, fmt: str = "generic") -> ParsedFailure:
    """Parse *raw* failure output. Total: never raises on text input.

    When no structured message can be found in a non-empty log, the raw text
    itself becomes the error message so downstream token matching still has
    material to work with.
    """
    if fmt not in LOG_FORMATS:
        fmt = "generic"
    try:
        if fmt == "python-traceback":
            parsed = _parse_python(raw)
        elif fmt == "junit-style":
            parsed = _parse_junit(raw)
        else:
            parsed = _parse_generic(raw)
    except Exception:  # noqa: BLE001 - totality beats precision here
        logger.debug("failure-log parse error", exc_info=True)
        parsed = ParsedFailure()
    if not parsed.error_message and raw:
        parsed.error_message = raw
    return parsed


# --- RED execution --------------------------------------------------------------

_UNITTEST_ERROR = re.compile(r"^ERROR: ", re.MULTILINE)
_UNITTEST_FAIL = re.compile(r"^FAIL: ", re.MULTILINE)
_IMPORTISH_ERROR = re.compile(r"\b(ImportError|ModuleNotFoundError|SyntaxError)\b")


def classify_test_outcome(result: CommandResult, cfg: RunnerConfig) -> str:
    """Map one test invocation to passed / failed / error."""
    if result.exit_code == 0:
        return "passed"
    if result.exit_code not in cfg.failure_exit_codes:
        return "error"
    log = result.output
    if _IMPORTISH_ERROR.search(log) and not _UNITTEST_FAIL.search(log):
        return "error"
    if _UNITTEST_ERROR.search(log) and not _UNITTEST_FAIL.search(log):
        return "error"
    return "failed"


def run_target_tests(workspace: Path | str, target_tests: list[str],
                     cfg: RunnerConfig) -> tuple[dict[str, str], str]:
    """Run each target test in order; return per-test outcomes and a tagged log."""
    if not target_tests:
        raise ValueError("target_tests must be non-empty")
    outcomes: dict[str, str] = {}
    sections: list[str] = []
    for tid in target_tests:
        result = run_test_command(
            cfg.red_command, workspace=workspace, test_id=tid, timeout=cfg.timeout_s,
            env=cfg.env,
        )
        outcomes[tid] = classify_test_outcome(result, cfg)
        sections.append(f"=== target test: {tid} (exit {result.exit_code}) ===\n{result.output}")
    return outcomes, "\n".join(sections)


def run_red(workspace: Path | str, target_tests: list[str],
            cfg: RunnerConfig) -> RedEvidence:
    """Reproduce the originally failing target tests on the clean checkout.

    Raises RedUnexpectedlyPassed when every target test passes: that is a
    configuration or benchmark error and the run must abort rather than
    proceed without failure evidence.
    """
    outcomes, raw_log = run_target_tests(workspace, target_tests, cfg)
    if all(o == "passed" for o in outcomes.values()):
        raise RedUnexpectedlyPassed(target_tests)
    outcome = "failed" if any(o == "failed" for o in outcomes.values()) else "error"
    parsed = parse_failure_log(raw_log, cfg.log_format)
    return RedEvidence(
        test_ids=list(target_tests),
        error_message=parsed.error_message,
        assertion_text=parsed.assertion_text,
        frames=parsed.frames,
        raw_log=raw_log,
        outcome=outcome,
        file_line_refs=parsed.file_line_refs,
        per_test_outcomes=outcomes,
    )


def persist_red(evidence: RedEvidence, run_dir: Path) -> None:
    """Write red.log (raw) and red.json (parsed) into the run directory."""
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "red.log").write_text(evidence.raw_log, encoding="utf-8")
    (run_dir / "red.json").write_text(
        json.dumps(evidence.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
