"""Matplotlib renderings of aggregate run metrics.

The metrics subcommand writes these PNGs next to its CSV so a batch of runs
can be eyeballed without spreadsheet work: token usage by stage, gate-failure
counts, and the outcome distribution.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .report import MetricsSummary, RunReport  # noqa: E402

CSV_COLUMNS = (
    "instance_id", "terminal", "accepted", "localize_calls", "patch_calls",
    "comp_fail", "val_fail", "tokens_in", "tokens_out", "runtime_s", "cost",
)


def write_metrics_csv(reports: list[RunReport], path: Path | str) -> Path:
    """One row per run, in instance-id order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in sorted(reports, key=lambda r: r.instance_id):
            writer.writerow([
                r.instance_id,
                r.terminal,
                int(r.accepted),
                r.counters.get("localize_calls", 0),
                r.counters.get("patch_calls", 0),
                r.counters.get("comp_fail", 0),
                r.counters.get("val_fail", 0),
                r.usage.get("tokens_in", 0),
                r.usage.get("tokens_out", 0),
                r.usage.get("runtime_s", 0.0),
                r.usage.get("cost", ""),
            ])
    return path


def _stage_tokens(report: RunReport, stage: str) -> int:
    s = report.usage.get("by_stage", {}).get(stage, {})
    return s.get("input_tokens", 0) + s.get("output_tokens", 0)


def render_metrics_figures(reports: list[RunReport], summary: MetricsSummary,
                           out_dir: Path | str) -> list[Path]:
    """Write the standard figure set into *out_dir*; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ordered = sorted(reports, key=lambda r: r.instance_id)
    ids = [r.instance_id for r in ordered]
    x = range(len(ordered))
    written: list[Path] = []

    fig, ax = plt.subplots(figsize=(max(6, len(ids) * 0.7), 4))
    loc = [_stage_tokens(r, "localize") for r in ordered]
    pat = [_stage_tokens(r, "patch") for r in ordered]
    ax.bar(x, loc, label="localize", color="#4878cf")
    ax.bar(x, pat, bottom=loc, label="patch", color="#e1812c")
    ax.set_xticks(list(x))
    ax.set_xticklabels(ids, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("tokens")
    ax.set_title("Token usage by stage")
    ax.legend()
    fig.tight_layout()
    path = out_dir / "tokens_by_stage.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(max(6, len(ids) * 0.7), 4))
    width = 0.4
    comp = [r.counters.get("comp_fail", 0) for r in ordered]
    val = [r.counters.get("val_fail", 0) for r in ordered]
    ax.bar([i - width / 2 for i in x], comp, width=width, label="compile-gate rejects",
           color="#c44e52")
    ax.bar([i + width / 2 for i in x], val, width=width, label="validation failures",
           color="#8172b2")
    ax.set_xticks(list(x))
    ax.set_xticklabels(ids, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("count")
    ax.set_title("Gate outcomes per instance")
    ax.legend()
    fig.tight_layout()
    path = out_dir / "gate_outcomes.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(5, 4))
    terminals: dict[str, int] = {}
    for r in ordered:
        terminals[r.terminal] = terminals.get(r.terminal, 0) + 1
    labels = sorted(terminals)
    ax.bar(labels, [terminals[t] for t in labels], color="#55a868")
    ax.set_ylabel("runs")
    title = f"Terminal states (resolve rate {summary.resolve_rate:.1f}%)"
    if summary.hit_at_3 is not None:
        title += f", Hit@3 {summary.hit_at_3:.1f}%"
    ax.set_title(title, fontsize=10)
    fig.tight_layout()
    path = out_dir / "terminal_states.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    return written
