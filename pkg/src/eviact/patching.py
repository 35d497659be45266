"""Candidate patch representation, application, and the compile gate.

The gate short-circuits through three indicators: the candidate must be a
well-formed edit (structured JSON or unified diff), it must apply cleanly to
a fresh copy of the pristine checkout, and the result must pass syntax (and,
when configured, build) checks. Failures come back as structured diagnostics
that feed the next refinement attempt; the original checkout is never touched.
"""

from __future__ import annotations

import fnmatch
import json
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath

from . import diffs
from .errors import ApplyError, MalformedCandidate
from .index import get_grammar
from .runner import run_test_command

logger = logging.getLogger(__name__)


@dataclass
class ReplaceOp:
    start_line: int
    end_line: int
    text: str

    def to_dict(self) -> dict:
        return {"type": "replace", "start_line": self.start_line,
                "end_line": self.end_line, "text": self.text}


@dataclass
class FileEdits:
    path: str
    ops: list[ReplaceOp]

    def to_dict(self) -> dict:
        return {"path": self.path, "ops": [op.to_dict() for op in self.ops]}


@dataclass
class EditSet:
    """A candidate patch: structured replace ops or a unified diff."""

    form: str  # structured | unified_diff
    edits: list[FileEdits] = field(default_factory=list)
    diff_text: str = ""
    source: str = "agent"

    def target_paths(self) -> list[str]:
        if self.form == "structured":
            return [fe.path for fe in self.edits]
        return [d.target_path for d in diffs.parse_unified_diff(self.diff_text)]

    def to_dict(self) -> dict:
        if self.form == "structured":
            return {"form": self.form, "source": self.source,
                    "edits": [fe.to_dict() for fe in self.edits]}
        return {"form": self.form, "source": self.source, "diff_text": self.diff_text}


@dataclass
class GateResult:
    """Outcome of one compile-gate evaluation."""

    passed: bool
    stage_failed: str | None = None  # diff | apply | compile
    diagnostics: dict | None = None  # failure_type, file, hunk_or_op_index, tool_output

    def __post_init__(self) -> None:
        if self.passed and self.stage_failed is not None:
            raise ValueError("a passing gate cannot name a failed stage")
        if not self.passed and (self.stage_failed is None or not self.diagnostics):
            raise ValueError("a failing gate must carry stage_failed and diagnostics")

    def to_dict(self) -> dict:
        return {"passed": self.passed, "stage_failed": self.stage_failed,
                "diagnostics": self.diagnostics}


@dataclass
class CompileCheckConfig:
    """How to check a patched workspace: grammar re-parse plus optional build."""

    language: str = "python"
    build_command: str | None = None  # template with {workspace}
    build_timeout_s: float = 120.0


# --- candidate parsing ---------------------------------------------------------


def _validate_structured(doc) -> list[FileEdits]:
    if not isinstance(doc, list) or not doc:
        raise MalformedCandidate("structured candidate must be a non-empty JSON array")
    edits: list[FileEdits] = []
    for item in doc:
        if not isinstance(item, dict):
            raise MalformedCandidate("each edit entry must be an object")
        path = item.get("path")
        ops = item.get("ops")
        if not isinstance(path, str) or not path:
            raise MalformedCandidate("edit entry missing 'path'")
        if not isinstance(ops, list) or not ops:
            raise MalformedCandidate(f"edit entry for {path} missing 'ops'")
        parsed_ops: list[ReplaceOp] = []
        for op in ops:
            if not isinstance(op, dict) or op.get("type") != "replace":
                raise MalformedCandidate(f"unsupported op in {path}: {op!r}")
            start, end, text = op.get("start_line"), op.get("end_line"), op.get("text")
            if not isinstance(start, int) or not isinstance(end, int) \
                    or isinstance(start, bool) or isinstance(end, bool):
                raise MalformedCandidate(f"non-integer line numbers in {path}")
            if start < 1 or end < start:
                raise MalformedCandidate(f"bad replace range {start}..{end} in {path}")
            if not isinstance(text, str):
                raise MalformedCandidate(f"replace op in {path} missing 'text'")
            parsed_ops.append(ReplaceOp(start_line=start, end_line=end, text=text))
        edits.append(FileEdits(path=path, ops=parsed_ops))
    return edits


def parse_candidate(raw: str, source: str = "agent") -> EditSet:
    """Recognize structured-edit JSON first, then a unified diff.

    Nothing is stripped from the candidate: markdown fences or surrounding
    prose make it malformed by contract.
    """
    if not raw or not raw.strip():
        raise MalformedCandidate("empty candidate")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError:
        doc = None
    if doc is not None:
        return EditSet(form="structured", edits=_validate_structured(doc), source=source)
    if raw.startswith("diff --git"):
        try:
            diffs.parse_unified_diff(raw)
        except diffs.DiffParseError as exc:
            raise MalformedCandidate(f"broken unified diff: {exc}") from exc
        return EditSet(form="unified_diff", diff_text=raw, source=source)
    raise MalformedCandidate(
        "candidate is neither structured-edit JSON nor a unified diff "
        'beginning with "diff --git"'
    )


# --- application -----------------------------------------------------------------


def _is_protected(rel_path: str, protected_globs: tuple[str, ...]) -> bool:
    posix = PurePosixPath(rel_path).as_posix()
    return any(fnmatch.fnmatch(posix, g) for g in protected_globs)


def _safe_target(workspace: Path, rel_path: str) -> Path:
    candidate = (workspace / rel_path).resolve()
    if not candidate.is_relative_to(workspace.resolve()):
        raise ApplyError("invalid_path", rel_path, detail="escapes the workspace")
    return candidate


def _read_normalized(path: Path) -> tuple[list[str], str, bool]:
    """Read a file as LF-normalized lines plus its original EOL style."""
    raw = path.read_bytes().decode("utf-8")
    eol = "\r\n" if "\r\n" in raw else "\n"
    text = raw.replace("\r\n", "\n")
    trailing = text.endswith("\n") or text == ""
    lines = text.split("\n")
    if trailing and lines and lines[-1] == "":
        lines.pop()
    return lines, eol, trailing


def _write_restored(path: Path, lines: list[str], eol: str, trailing: bool) -> None:
    text = eol.join(lines)
    if lines and trailing:
        text += eol
    path.write_text(text, encoding="utf-8", newline="")


def _apply_structured_file(workspace: Path, fe: FileEdits) -> tuple[Path, list[str], str, bool]:
    target = _safe_target(workspace, fe.path)
    if not target.is_file():
        raise ApplyError("missing_file", fe.path)
    lines, eol, trailing = _read_normalized(target)
    ordered = sorted(enumerate(fe.ops), key=lambda p: p[1].start_line)
    for (ia, a), (ib, b) in zip(ordered, ordered[1:]):
        if b.start_line <= a.end_line:
            raise ApplyError("overlapping_ops", fe.path, index=ib,
                             detail=f"ops {ia} and {ib} overlap")
    for i, op in enumerate(fe.ops):
        if op.end_line > len(lines):
            raise ApplyError("range_out_of_bounds", fe.path, index=i,
                             detail=f"{op.start_line}..{op.end_line} in a "
                                    f"{len(lines)}-line file")
    # bottom-up so earlier line numbers stay valid
    for _, op in sorted(enumerate(fe.ops), key=lambda p: -p[1].start_line):
        replacement = op.text.split("\n")
        if op.text.endswith("\n"):
            replacement.pop()
        elif op.text == "":
            replacement = []
        lines[op.start_line - 1:op.end_line] = replacement
    return target, lines, eol, trailing


def _apply_diff_file(workspace: Path, fd: diffs.FileDiff,
                     hunk_base: int) -> tuple[Path, list[str], str, bool]:
    rel = fd.target_path
    target = _safe_target(workspace, rel)
    if fd.old_path == "/dev/null":
        if target.exists():
            raise ApplyError("context_mismatch", rel, index=hunk_base,
                             detail="creation diff but the file already exists")
        original = ""
        eol, trailing = "\n", True
    else:
        source = _safe_target(workspace, fd.old_path)
        if not source.is_file():
            raise ApplyError("missing_file", fd.old_path)
        lines, eol, trailing = _read_normalized(source)
        original = "\n".join(lines)
        if lines and trailing:
            original += "\n"
    try:
        patched = diffs.apply_file_diff(original, fd)
    except diffs.HunkApplyError as exc:
        raise ApplyError("context_mismatch", rel, index=hunk_base + exc.hunk_index,
                         detail=str(exc)) from exc
    new_trailing = patched.endswith("\n") or patched == ""
    new_lines = patched.split("\n")
    if new_trailing and new_lines and new_lines[-1] == "":
        new_lines.pop()
    return target, new_lines, eol, new_trailing


def apply_edits(workspace: Path | str, edits: EditSet,
                protected_globs: tuple[str, ...] = ()) -> list[str]:
    """Apply a candidate to *workspace* (must be a disposable copy of s0).

    Two-phase: every file's result is computed and validated before anything
    is written, so a failing candidate leaves no partial writes behind.
    Returns the repository-relative paths that were modified.
    """
    ws = Path(workspace)
    writes: list[tuple[Path, list[str], str, bool]] = []
    deletions: list[Path] = []
    modified: list[str] = []

    if edits.form == "structured":
        for fe in edits.edits:
            if _is_protected(fe.path, protected_globs):
                raise ApplyError("protected_path", fe.path,
                                 detail="test files are write-protected")
            writes.append(_apply_structured_file(ws, fe))
            modified.append(fe.path)
    elif edits.form == "unified_diff":
        try:
            file_diffs = diffs.parse_unified_diff(edits.diff_text)
        except diffs.DiffParseError as exc:  # parse_candidate normally catches this first
            raise MalformedCandidate(str(exc)) from exc
        hunk_base = 0
        for fd in file_diffs:
            rel = fd.target_path
            if _is_protected(rel, protected_globs):
                raise ApplyError("protected_path", rel,
                                 detail="test files are write-protected")
            if fd.new_path == "/dev/null":
                target = _safe_target(ws, fd.old_path)
                if not target.is_file():
                    raise ApplyError("missing_file", fd.old_path)
                deletions.append(target)
                modified.append(fd.old_path)
            else:
                writes.append(_apply_diff_file(ws, fd, hunk_base))
                modified.append(rel)
            hunk_base += len(fd.hunks)
    else:
        raise MalformedCandidate(f"unknown edit form {edits.form!r}")

    for target in deletions:
        target.unlink()
    for target, lines, eol, trailing in writes:
        target.parent.mkdir(parents=True, exist_ok=True)
        _write_restored(target, lines, eol, trailing)
    return modified


# --- compile checking ------------------------------------------------------------


def check_compile(workspace: Path | str, modified_files: list[str],
                  cfg: CompileCheckConfig | None = None) -> dict | None:
    """Syntax-check every modified source file, then run the build command.

    Returns None when everything passes, else a diagnostics dict. The syntax
    tier always runs, even when a build command exists: it is cheap and names
    the offending file precisely.
    """
    cfg = cfg or CompileCheckConfig()
    ws = Path(workspace)
    grammar = get_grammar(cfg.language)
    for rel in modified_files:
        path = ws / rel
        if path.suffix not in grammar.suffixes or not path.is_file():
            continue
        problem = grammar.check_syntax(path.read_text(encoding="utf-8"), rel)
        if problem:
            return {
                "failure_type": "syntax",
                "file": rel,
                "hunk_or_op_index": None,
                "tool_output": problem,
            }
    if cfg.build_command:
        result = run_test_command(cfg.build_command, workspace=ws,
                                  timeout=cfg.build_timeout_s)
        if result.exit_code != 0:
            return {
                "failure_type": "build",
                "file": None,
                "hunk_or_op_index": None,
                "tool_output": result.output[-4000:],
            }
    return None


# --- the gate --------------------------------------------------------------------

_COPY_IGNORE = shutil.ignore_patterns("__pycache__", "*.pyc", ".git")


def snapshot_workspace(src: Path | str, dst: Path | str) -> Path:
    dst = Path(dst)
    shutil.copytree(src, dst, ignore=_COPY_IGNORE)
    return dst


def compile_gate(s0: Path | str, raw_candidate: str, attempt_dir: Path | str,
                 check_cfg: CompileCheckConfig | None = None,
                 protected_globs: tuple[str, ...] = (),
                 source: str = "agent") -> tuple[GateResult, Path | None, EditSet | None]:
    """Evaluate one candidate: well-formed -> applies cleanly -> compiles.

    Short-circuits in that order; the first failing tier produces the result
    and later tiers never run (a malformed candidate causes no filesystem
    write at all). On success the patched workspace copy is returned; on
    failure the copy is discarded and s0 stays byte-identical.
    """
    try:
        edits = parse_candidate(raw_candidate, source=source)
    except MalformedCandidate as exc:
        return GateResult(
            passed=False,
            stage_failed="diff",
            diagnostics={
                "failure_type": "malformed_candidate",
                "file": None,
                "hunk_or_op_index": None,
                "tool_output": str(exc),
            },
        ), None, None

    attempt_dir = Path(attempt_dir)
    workspace = snapshot_workspace(s0, attempt_dir)
    try:
        modified = apply_edits(workspace, edits, protected_globs)
    except (ApplyError, MalformedCandidate) as exc:
        shutil.rmtree(workspace, ignore_errors=True)
        reason = exc.reason if isinstance(exc, ApplyError) else "malformed_candidate"
        return GateResult(
            passed=False,
            stage_failed="apply",
            diagnostics={
                "failure_type": reason,
                "file": getattr(exc, "file", None),
                "hunk_or_op_index": getattr(exc, "index", None),
                "tool_output": str(exc),
            },
        ), None, edits

    problem = check_compile(workspace, modified, check_cfg)
    if problem:
        shutil.rmtree(workspace, ignore_errors=True)
        return GateResult(passed=False, stage_failed="compile", diagnostics=problem), None, edits
    return GateResult(passed=True), workspace, edits
