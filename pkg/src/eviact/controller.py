"""Repair orchestration: budgets, agent mediation, and the stage loop.

One run walks Setup -> Localize -> Patch -> Verify, charging every agent
round-trip against per-phase call budgets and a wall clock. Gate diagnostics
and GREEN failure evidence flow into the next agent request; repeated GREEN
failures under the same suspect set trigger re-localization while budget
remains. A run ends in exactly one terminal state: accepted,
budget_exhausted, timeout, or aborted(reason).
"""

from __future__ import annotations

import concurrent.futures
import json
import logging
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import agent as agent_mod
from .agent import AgentAdapter, AgentRequest, AgentResponse
from .config import RepairConfig
from .errors import (
    AgentUnreachable,
    BudgetExhausted,
    EviactError,
    LocalizationEmpty,
    RedUnexpectedlyPassed,
    SetupFailure,
    WallClockExpired,
)
from .evidence import RedEvidence, persist_red, run_red
from .index import Index, build_index
from .patching import CompileCheckConfig, EditSet, compile_gate
from .report import RunReport, emit_report
from .scaffold import (
    ExpansionStats,
    ScoredCandidate,
    SuspectSet,
    localize,
    parse_localization_json,
    resolve_localization,
    score_candidates,
    signals_from_evidence,
    to_localization_json,
)
from .trajectory import TrajectoryLog
from .verify import td_gate

logger = logging.getLogger(__name__)

_DIAG_EVENT_CAP = 2000


@dataclass
class Budget:
    """Per-phase call caps plus the run's wall clock."""

    max_localize_calls: int = 36
    max_patch_calls: int = 20
    wall_clock_limit_s: float = 2700.0
    used_localize: int = 0
    used_patch: int = 0
    started_at: float | None = None
    clock: object = time.monotonic

    def start(self) -> None:
        self.started_at = self.clock()

    @property
    def elapsed_s(self) -> float:
        if self.started_at is None:
            return 0.0
        return self.clock() - self.started_at

    @property
    def expired(self) -> bool:
        return self.elapsed_s > self.wall_clock_limit_s

    def remaining(self, kind: str) -> int:
        if kind == "localize":
            return self.max_localize_calls - self.used_localize
        if kind == "patch":
            return self.max_patch_calls - self.used_patch
        raise ValueError(f"unknown budget kind {kind!r}")

    def charge(self, kind: str) -> int:
        """Consume one call of *kind*; returns the remaining count.

        The wall clock is checked on every charge. Raises WallClockExpired
        when the limit elapsed and BudgetExhausted when the cap is reached.
        """
        if self.expired:
            raise WallClockExpired(f"wall clock exceeded {self.wall_clock_limit_s}s")
        if self.remaining(kind) <= 0:
            raise BudgetExhausted(kind)
        if kind == "localize":
            self.used_localize += 1
        else:
            self.used_patch += 1
        return self.remaining(kind)


@dataclass
class RunState:
    """Mutable per-run orchestration state."""

    stage: str = "setup"
    current_suspects: SuspectSet | None = None
    consecutive_green_failures: int = 0
    trajectory: TrajectoryLog = field(default_factory=TrajectoryLog)
    terminal: str | None = None
    terminal_reason: str | None = None

    def set_terminal(self, terminal: str, reason: str | None = None) -> None:
        if self.terminal is not None:
            raise RuntimeError(f"terminal already set to {self.terminal}")
        self.terminal = terminal
        self.terminal_reason = reason
        self.trajectory.emit("terminal", state=terminal, reason=reason)


def should_relocalize(state: RunState, budget: Budget, threshold: int = 3) -> bool:
    """Re-localize after *threshold* consecutive GREEN failures, budget permitting."""
    return (
        state.consecutive_green_failures >= threshold
        and budget.remaining("localize") > 0
    )


def mediate(adapter: AgentAdapter, request: AgentRequest, *,
            timeout_s: float = 60.0, retries: int = 2) -> AgentResponse:
    """Dispatch one request to the adapter with a per-request timeout.

    The caller must have charged the budget for this phase already. A timeout
    or an empty completion becomes an agent-failure marker (the charge stays
    consumed); an adapter that keeps raising becomes AgentUnreachable.
    """
    last_error: Exception | None = None
    for _ in range(max(1, retries)):
        executor = concurrent.futures.ThreadPoolExecutor(max_workers=1)
        try:
            future = executor.submit(adapter.complete, request)
            response = future.result(timeout=timeout_s)
        except concurrent.futures.TimeoutError:
            return AgentResponse.failure(f"adapter timed out after {timeout_s}s")
        except Exception as exc:  # noqa: BLE001 - adapter faults must not kill the run
            last_error = exc
            continue
        finally:
            executor.shutdown(wait=False)
        if not response.text.strip() and not response.failed:
            return AgentResponse.failure("adapter returned empty text")
        return response
    raise AgentUnreachable(f"adapter failed {retries} time(s): {last_error}")


# --- rendering helpers -------------------------------------------------------


def _render_evidence(evidence: RedEvidence, max_frames: int = 5) -> str:
    lines = [
        f"failing tests: {', '.join(evidence.test_ids)}",
        f"outcome: {evidence.outcome}",
        f"error: {evidence.error_message.splitlines()[0] if evidence.error_message else '(none)'}",
    ]
    if evidence.assertion_text:
        lines.append(f"assertion: {evidence.assertion_text.splitlines()[0]}")
    for frame in evidence.frames[:max_frames]:
        where = frame.qualified_symbol or frame.symbol or "?"
        loc = f"{frame.file}:{frame.line}" if frame.file else "?"
        lines.append(f"  at {where} ({loc})")
    return "\n".join(lines)


def _render_suspects(suspects: SuspectSet | None) -> str:
    if suspects is None or not suspects.suspects:
        return "(no suspects)"
    blocks = []
    for rank, (span, cand) in enumerate(suspects.suspects, start=1):
        head = (f"rank {rank}: {span.file}:{span.start_line}-{span.end_line} "
                f"{span.kind} {span.qualified_symbol or span.symbol}")
        if cand.evidence_note:
            head += f" [{cand.evidence_note}]"
        body = span.content or span.descriptor
        numbered = "\n".join(
            f"{span.start_line + i}: {text}"
            for i, text in enumerate(body.splitlines()[:60])
        )
        blocks.append(f"{head}\n{numbered}")
    return "\n\n".join(blocks)


def _render_gate_diag(diag: dict) -> str:
    parts = [f"compile gate failure: {diag.get('failure_type')}"]
    if diag.get("file"):
        parts.append(f"file: {diag['file']}")
    if diag.get("hunk_or_op_index") is not None:
        parts.append(f"hunk/op index: {diag['hunk_or_op_index']}")
    parts.append(str(diag.get("tool_output", "")))
    return "\n".join(parts)


# --- the orchestrator --------------------------------------------------------


class RepairRun:
    """Internal driver for one repair instance."""

    def __init__(self, config: RepairConfig, adapter: AgentAdapter, run_dir: Path):
        self.config = config
        self.adapter = adapter
        self.run_dir = run_dir
        self.state = RunState(trajectory=TrajectoryLog(run_dir / "trajectory.jsonl"))
        self.budget = Budget(
            max_localize_calls=config.budget.max_localize_calls,
            max_patch_calls=config.budget.max_patch_calls,
            wall_clock_limit_s=config.budget.wall_clock_limit_s,
        )
        self.usage = {
            "localize": {"input_tokens": 0, "output_tokens": 0, "calls": 0},
            "patch": {"input_tokens": 0, "output_tokens": 0, "calls": 0},
        }
        self.index: Index | None = None
        self.evidence: RedEvidence | None = None
        self.diag_context = ""
        self.tried_span_ids: set[str] = set()
        self.relocalize_requested = False
        self.accepted_edits: EditSet | None = None
        self.accepted_workspace: Path | None = None
        self.system_prompt = agent_mod.fill_system_prompt(
            config.agent.benchmark, config.language.language
        )

    # -- setup --

    def setup(self) -> None:
        tr = self.state.trajectory
        tr.emit("run_started", instance_id=self.config.instance_id)
        tr.emit("stage", stage="setup")
        try:
            self.index = build_index(self.config.repo, self.config.language)
        except EviactError as exc:
            raise SetupFailure(f"index construction failed: {exc}") from exc
        self.index.save(self.run_dir / "index.json")
        tr.emit("index", spans=len(self.index.spans), edges=len(self.index.edges))
        try:
            self.evidence = run_red(self.config.repo, self.config.target_tests,
                                    self.config.runner)
        except RedUnexpectedlyPassed:
            raise
        except EviactError as exc:
            raise SetupFailure(f"RED reproduction failed: {exc}") from exc
        persist_red(self.evidence, self.run_dir)
        tr.emit("red", outcome=self.evidence.outcome,
                test_ids=list(self.evidence.test_ids),
                error=self.evidence.error_message.splitlines()[0]
                if self.evidence.error_message else "")
        self.diag_context = "first attempt; no prior diagnostics"

    # -- mediated rounds --

    def _charged_call(self, phase: str, request: AgentRequest) -> AgentResponse:
        remaining = self.budget.charge(phase)
        tr = self.state.trajectory
        tr.emit("charge", kind=phase,
                used=self.budget.used_localize if phase == "localize" else self.budget.used_patch,
                remaining=remaining)
        response = mediate(self.adapter, request,
                           timeout_s=self.config.agent.timeout_s,
                           retries=self.config.agent.retries)
        stage_usage = self.usage[phase]
        stage_usage["calls"] += 1
        if response.usage:
            stage_usage["input_tokens"] += int(response.usage.get("input_tokens", 0))
            stage_usage["output_tokens"] += int(response.usage.get("output_tokens", 0))
        tr.emit("agent_call", phase=phase, attempt=request.attempt,
                ok=not response.failed, failure_reason=response.failure_reason,
                usage=response.usage,
                diagnostic_context=str(request.context.get("diagnostic_context", ""))[:_DIAG_EVENT_CAP])
        return response

    def localize_round(self) -> None:
        tr = self.state.trajectory
        self.state.stage = "localize"
        tr.emit("stage", stage="localize")
        assert self.index is not None and self.evidence is not None

        det_suspects: SuspectSet | None = None
        try:
            det_suspects = localize(
                self.evidence, self.index, self.config.k,
                self.config.expansion, demoted=frozenset(self.tried_span_ids),
            )
        except LocalizationEmpty as exc:
            tr.emit("localization_empty", detail=str(exc))

        working_set = (
            to_localization_json(det_suspects, self.evidence) if det_suspects else {}
        )
        request = AgentRequest(
            phase="localize",
            system_prompt=self.system_prompt,
            prompt=agent_mod.fill_localization_prompt(
                workdir=str(self.config.repo),
                red_log_path=str(self.run_dir / "red.log"),
                index_path=str(self.run_dir / "index.json"),
                language=self.config.language.language,
                working_set=_render_working_set(working_set),
            ),
            context={"working_set": working_set},
            attempt=self.budget.used_localize + 1,
        )
        response = self._charged_call("localize", request)

        chosen = det_suspects
        if not response.failed:
            try:
                doc = parse_localization_json(response.text)
                span_ids = resolve_localization(doc, self.index)[: self.config.k]
                if span_ids:
                    chosen = self._suspects_from_ids(span_ids, det_suspects)
            except ValueError as exc:
                tr.emit("agent_localization_rejected", detail=str(exc))

        if chosen is None:
            self.state.set_terminal("aborted", "localization-empty")
            return
        self.state.current_suspects = chosen
        tr.emit(
            "suspects",
            span_ids=chosen.span_ids(),
            files=chosen.files(),
            seed_ids=chosen.seed_ids,
            nodes_visited=chosen.expansion_stats.nodes_visited,
            depth_reached=chosen.expansion_stats.depth_reached,
        )

    def _suspects_from_ids(self, span_ids: list[str],
                           det: SuspectSet | None) -> SuspectSet:
        """Build a suspect set from agent-chosen span ids, reusing the
        deterministic scores where available."""
        assert self.index is not None and self.evidence is not None
        by_id = {c.span_id: c for _, c in (det.suspects if det else [])}
        pairs = []
        fresh: list[ScoredCandidate] = []
        for sid in span_ids:
            span = self.index.get(sid)
            if span is None:
                continue
            cand = by_id.get(sid)
            if cand is None:
                cand = ScoredCandidate(span_id=sid, length=span.length,
                                       evidence_note="agent-selected")
                fresh.append(cand)
            pairs.append((span, cand))
        if fresh:
            score_candidates(fresh, signals_from_evidence(self.evidence), self.index)
        return SuspectSet(
            suspects=pairs,
            k=self.config.k,
            seed_ids=det.seed_ids if det else [],
            expansion_stats=det.expansion_stats if det else ExpansionStats(),
        )

    def patch_round(self) -> None:
        tr = self.state.trajectory
        self.state.stage = "patch"
        tr.emit("stage", stage="patch")
        assert self.evidence is not None
        attempt = self.budget.used_patch + 1
        request = AgentRequest(
            phase="patch",
            system_prompt=self.system_prompt,
            prompt=agent_mod.fill_patch_prompt(
                red_evidence=_render_evidence(self.evidence),
                suspect_spans=_render_suspects(self.state.current_suspects),
                diagnostic_context=self.diag_context,
                language=self.config.language.language,
            ),
            context={"diagnostic_context": self.diag_context},
            attempt=attempt,
        )
        response = self._charged_call("patch", request)
        if response.failed:
            self.diag_context = (
                f"attempt {attempt}: agent produced no usable output "
                f"({response.failure_reason})"
            )
            return

        gate, workspace, edits = compile_gate(
            self.config.repo,
            response.text,
            attempt_dir=self.run_dir / "attempts" / f"attempt-{attempt:03d}",
            check_cfg=CompileCheckConfig(
                language=self.config.language.language,
                build_command=self.config.build_command,
            ),
            protected_globs=self.config.protected_globs,
        )
        tr.emit("compile_gate", attempt=attempt, passed=gate.passed,
                stage_failed=gate.stage_failed,
                diagnostics=_trim_diag(gate.diagnostics))
        if not gate.passed:
            assert gate.diagnostics is not None
            self.diag_context = f"attempt {attempt}:\n{_render_gate_diag(gate.diagnostics)}"
            return

        self.state.stage = "verify"
        tr.emit("stage", stage="verify")
        assert workspace is not None
        outcome = td_gate(
            workspace, self.config.target_tests, self.config.runner,
            events=lambda name, payload: tr.emit(name, attempt=attempt, **payload),
        )
        (self.run_dir / "green.log").write_text(outcome.green_log, encoding="utf-8")
        tr.emit("td_gate", attempt=attempt, accepted=outcome.accepted,
                green_passed=outcome.green_passed,
                regression_passed=outcome.regression_passed)

        if outcome.accepted:
            self.accepted_edits = edits
            self.accepted_workspace = workspace
            self.state.set_terminal("accepted")
            return

        shutil.rmtree(workspace, ignore_errors=True)
        if not outcome.green_passed:
            self.state.consecutive_green_failures += 1
            self.tried_span_ids.update(
                self.state.current_suspects.span_ids()
                if self.state.current_suspects else []
            )
            ev = outcome.green_evidence
            summary = _render_evidence(ev) if ev else "GREEN failed without evidence"
            self.diag_context = (
                f"attempt {attempt}: patch compiled but the target tests still fail\n{summary}"
            )
            if should_relocalize(self.state, self.budget, self.config.relocalize_threshold):
                tr.emit("relocalize",
                        consecutive_green_failures=self.state.consecutive_green_failures)
                self.relocalize_requested = True
                self.state.consecutive_green_failures = 0
        else:
            self.state.consecutive_green_failures = 0
            tail = outcome.regression_log[-1500:]
            self.diag_context = (
                f"attempt {attempt}: target tests pass but the full regression "
                f"suite fails\n{tail}"
            )

    # -- main loop --

    def run(self) -> RunReport:
        started_wall = time.time()
        started = time.monotonic()
        try:
            self.setup()
        except RedUnexpectedlyPassed as exc:
            self.state.trajectory.emit("red", outcome="passed",
                                       test_ids=list(self.config.target_tests))
            self.state.set_terminal("aborted", f"setup:red-unexpectedly-passed: {exc}")
            return self._finish(started_wall, started)
        except SetupFailure as exc:
            self.state.trajectory.emit("setup_failure", detail=str(exc))
            self.state.set_terminal("aborted", f"setup:{exc}")
            return self._finish(started_wall, started)

        self.budget.start()
        try:
            while self.state.terminal is None:
                if self.budget.expired:
                    self.state.set_terminal("timeout")
                    break
                need_localize = (
                    self.state.current_suspects is None or self.relocalize_requested
                )
                if need_localize and self.budget.remaining("localize") > 0:
                    self.localize_round()
                    self.relocalize_requested = False
                    continue  # re-check wall clock and terminal before patching
                if self.budget.remaining("patch") > 0:
                    self.patch_round()
                elif self.budget.remaining("localize") > 0:
                    self.relocalize_requested = True
                else:
                    self.state.set_terminal("budget_exhausted")
        except WallClockExpired:
            self.state.set_terminal("timeout")
        except BudgetExhausted:  # guards normally prevent this
            self.state.set_terminal("budget_exhausted")
        except AgentUnreachable as exc:
            self.state.set_terminal("aborted", f"agent-unreachable: {exc}")
        return self._finish(started_wall, started)

    def _finish(self, started_wall: float, started_monotonic: float) -> RunReport:
        report = RunReport.from_run(
            instance_id=self.config.instance_id,
            terminal=self.state.terminal or "aborted",
            terminal_reason=self.state.terminal_reason,
            suspects=self.state.current_suspects,
            patch=self.accepted_edits,
            trajectory=self.state.trajectory,
            usage_by_stage=self.usage,
            runtime_s=time.monotonic() - started_monotonic,
            started_at=started_wall,
            pricing=self.config.pricing,
            budget_counters={
                "localize_calls": self.budget.used_localize,
                "patch_calls": self.budget.used_patch,
            },
        )
        emit_report(report, "json", self.run_dir / "report.json")
        emit_report(report, "human-text", self.run_dir / "report.txt")
        return report


def _render_working_set(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) if doc else "(empty)"


def _trim_diag(diag: dict | None) -> dict | None:
    if diag is None:
        return None
    trimmed = dict(diag)
    trimmed["tool_output"] = str(trimmed.get("tool_output", ""))[:_DIAG_EVENT_CAP]
    return trimmed


def run_repair(config: RepairConfig, adapter: AgentAdapter,
               run_dir: Path | str | None = None) -> RunReport:
    """Execute one full repair run and persist its artifacts under run_dir.

    The run directory (default runs_dir/<instance_id>) is recreated from
    scratch and afterwards contains red.log, red.json, green.log,
    trajectory.jsonl, index.json, report.json, and report.txt.
    """
    if run_dir is None:
        run_dir = Path(config.runs_dir) / config.instance_id
    run_dir = Path(run_dir)
    if run_dir.exists():
        shutil.rmtree(run_dir)
    run_dir.mkdir(parents=True)
    return RepairRun(config, adapter, run_dir).run()
