"""Run reports and aggregate metrics.

A RunReport is the canonical record of one repair run: terminal state, final
suspects, the accepted patch if any, gate-failure counters, and token usage by
stage. Counters are reconstructible from the trajectory log and the JSON form
is schema-stable so two scripted runs differ only in timing fields.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import GroundTruthMismatch, IoFailure
from .patching import EditSet
from .scaffold import SuspectSet
from .trajectory import TrajectoryLog

VOLATILE_REPORT_FIELDS = ("started_at", "runtime_s")


@dataclass
class RunReport:
    instance_id: str
    terminal: str
    accepted: bool
    terminal_reason: str | None = None
    suspects: list[dict] = field(default_factory=list)
    patch: dict | None = None
    counters: dict = field(default_factory=dict)
    usage: dict = field(default_factory=dict)
    trajectory: str = "trajectory.jsonl"
    started_at: float = 0.0

    @classmethod
    def from_run(cls, *, instance_id: str, terminal: str, terminal_reason: str | None,
                 suspects: SuspectSet | None, patch: EditSet | None,
                 trajectory: TrajectoryLog, usage_by_stage: dict, runtime_s: float,
                 started_at: float, pricing: dict | None,
                 budget_counters: dict) -> RunReport:
        counters = dict(budget_counters)
        counters.update(counters_from_events(trajectory.events))
        for kind in ("localize_calls", "patch_calls"):
            if counters[kind] != budget_counters[kind]:
                raise RuntimeError(
                    f"{kind} disagrees between budget ({budget_counters[kind]}) "
                    f"and trajectory ({counters[kind]})"
                )

        tokens_in = sum(s["input_tokens"] for s in usage_by_stage.values())
        tokens_out = sum(s["output_tokens"] for s in usage_by_stage.values())
        usage = {
            "tokens_in": tokens_in,
            "tokens_out": tokens_out,
            "runtime_s": round(runtime_s, 3),
            "by_stage": {k: dict(v) for k, v in sorted(usage_by_stage.items())},
        }
        if pricing:
            usage["cost"] = round(
                tokens_in / 1000.0 * float(pricing.get("input_per_1k", 0.0))
                + tokens_out / 1000.0 * float(pricing.get("output_per_1k", 0.0)),
                6,
            )

        suspect_rows = []
        if suspects is not None:
            for rank, (span, cand) in enumerate(suspects.suspects, start=1):
                suspect_rows.append({
                    "rank": rank,
                    "span_id": span.id,
                    "file": span.file,
                    "symbol": span.symbol,
                    "start_line": span.start_line,
                    "end_line": span.end_line,
                    "evidence": cand.evidence_note,
                })

        return cls(
            instance_id=instance_id,
            terminal=terminal,
            terminal_reason=terminal_reason,
            accepted=terminal == "accepted",
            suspects=suspect_rows,
            patch=patch.to_dict() if patch is not None else None,
            counters=counters,
            usage=usage,
            started_at=started_at,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> RunReport:
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> RunReport:
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: Path | str) -> RunReport:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def masked_json(self) -> str:
        """JSON form with timing fields zeroed, for determinism comparisons."""
        doc = self.to_dict()
        for key in VOLATILE_REPORT_FIELDS:
            doc.pop(key, None)
        doc.get("usage", {}).pop("runtime_s", None)
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    def top_files(self, n: int = 3) -> list[str]:
        files: list[str] = []
        for row in self.suspects[:n]:
            if row["file"] not in files:
                files.append(row["file"])
        return files


def counters_from_events(events: list[dict]) -> dict:
    """Recompute report counters from a trajectory event list."""
    return {
        "localize_calls": sum(
            1 for e in events if e["event"] == "charge" and e.get("kind") == "localize"
        ),
        "patch_calls": sum(
            1 for e in events if e["event"] == "charge" and e.get("kind") == "patch"
        ),
        "comp_fail": sum(
            1 for e in events if e["event"] == "compile_gate" and not e.get("passed")
        ),
        "val_fail": sum(
            1 for e in events if e["event"] == "td_gate" and not e.get("accepted")
        ),
    }


def _fmt_tokens(n: int) -> str:
    return f"{n / 1000:.1f}K"


def render_human(report: RunReport) -> str:
    """Stagewise plain-text summary; the final line states the run result."""
    c = report.counters
    u = report.usage
    stages = u.get("by_stage", {})

    def stage_row(name: str, key: str) -> str:
        s = stages.get(key, {})
        calls = s.get("calls", 0)
        toks = s.get("input_tokens", 0) + s.get("output_tokens", 0)
        return f"{name:<10} calls: {calls:<4} tokens: {_fmt_tokens(toks)}"

    lines = [
        f"Instance: {report.instance_id}",
        stage_row("Setup", "setup"),
        stage_row("Localize", "localize"),
        stage_row("Patch", "patch"),
        f"{'Verify':<10} compile-fails: {c.get('comp_fail', 0)}  "
        f"validation-fails: {c.get('val_fail', 0)}",
    ]
    if report.suspects:
        lines.append("Suspects: " + ", ".join(
            f"{row['file']}:{row['symbol']}" for row in report.suspects
        ))
    total_tokens = u.get("tokens_in", 0) + u.get("tokens_out", 0)
    runtime = u.get("runtime_s", 0.0)
    if report.accepted:
        verdict = "Result: Success"
    else:
        reason = report.terminal if report.terminal != "aborted" else (
            f"aborted: {report.terminal_reason}"
        )
        verdict = f"Result: Failed ({reason})"
    cost = f", Cost: ${u['cost']:.4f}" if "cost" in u else ""
    lines.append(
        f"{verdict}, Time: {runtime:.1f}s, Total tokens: {_fmt_tokens(total_tokens)}{cost}"
    )
    return "\n".join(lines) + "\n"


def emit_report(report: RunReport, fmt: str, path: Path | str) -> Path:
    """Write a report as schema-stable JSON or as the human stage summary."""
    path = Path(path)
    text = report.to_json() if fmt == "json" else render_human(report)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write report {path}: {exc}") from exc
    return path


# --- aggregation ------------------------------------------------------------


@dataclass
class MetricsSummary:
    instances: int
    resolve_rate: float  # percent
    hit_at_3: float | None  # percent, only with ground truth
    mean_localize_calls: float
    mean_patch_calls: float
    mean_comp_fail: float
    mean_val_fail: float
    mean_tokens: float
    mean_runtime_s: float
    mean_cost: float | None
    per_stage: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(reports: list[RunReport],
                    ground_truth: dict[str, list[str]] | None = None) -> MetricsSummary:
    """Aggregate run reports; Hit@3 needs a map instance -> modified files."""
    if not reports:
        raise ValueError("reports must be non-empty")
    n = len(reports)
    resolved = sum(1 for r in reports if r.accepted)

    hit_at_3 = None
    if ground_truth is not None:
        hits = 0
        for r in reports:
            if r.instance_id not in ground_truth:
                raise GroundTruthMismatch(
                    f"no ground-truth entry for instance {r.instance_id}"
                )
            truth = {_norm(p) for p in ground_truth[r.instance_id]}
            top = {_norm(p) for p in r.top_files(3)}
            if top & truth:
                hits += 1
        hit_at_3 = 100.0 * hits / n

    def mean(values) -> float:
        return sum(values) / n

    costs = [r.usage.get("cost") for r in reports]
    mean_cost = mean(costs) if all(c is not None for c in costs) else None

    per_stage: dict[str, dict[str, float]] = {}
    for stage in ("localize", "patch"):
        rows = [r.usage.get("by_stage", {}).get(stage, {}) for r in reports]
        per_stage[stage] = {
            "mean_calls": mean([row.get("calls", 0) for row in rows]),
            "mean_tokens": mean([
                row.get("input_tokens", 0) + row.get("output_tokens", 0) for row in rows
            ]),
        }

    return MetricsSummary(
        instances=n,
        resolve_rate=100.0 * resolved / n,
        hit_at_3=hit_at_3,
        mean_localize_calls=mean([r.counters.get("localize_calls", 0) for r in reports]),
        mean_patch_calls=mean([r.counters.get("patch_calls", 0) for r in reports]),
        mean_comp_fail=mean([r.counters.get("comp_fail", 0) for r in reports]),
        mean_val_fail=mean([r.counters.get("val_fail", 0) for r in reports]),
        mean_tokens=mean([
            r.usage.get("tokens_in", 0) + r.usage.get("tokens_out", 0) for r in reports
        ]),
        mean_runtime_s=mean([r.usage.get("runtime_s", 0.0) for r in reports]),
        mean_cost=mean_cost,
        per_stage=per_stage,
    )


def _norm(path: str) -> str:
    path = path.replace("\\", "/")
    while path.startswith("./"):
        path = path[2:]
    return path
