"""Command-line entry points.

Subcommands: index, red, localize, repair, metrics. Exit codes: 0 on success
(for repair: patch accepted), 1 when a repair run ends unresolved or an
operation fails, 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .agent import load_adapter
from .config import load_config
from .controller import run_repair
from .errors import ConfigError, EviactError, GrammarUnavailable
from .evidence import persist_red, run_red
from .index import LanguageConfig, build_index
from .report import RunReport, compute_metrics, render_human
from .scaffold import localize, to_localization_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNRESOLVED = 1
EXIT_CONFIG = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eviact",
        description="Evidence-gated automated program repair.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_index = sub.add_parser("index", help="build the span/graph index for a repository")
    p_index.add_argument("repo", type=Path)
    p_index.add_argument("--lang", default="python", help="grammar id (default: python)")
    p_index.add_argument("--glob", action="append", default=None,
                         help="file glob, repeatable (default: **/*.py)")
    p_index.add_argument("--out", type=Path, required=True, help="output index JSON path")

    p_red = sub.add_parser("red", help="reproduce the failing target tests")
    p_red.add_argument("--config", type=Path, required=True)
    p_red.add_argument("--out-dir", type=Path, default=None,
                       help="where to write red.log/red.json (default: runs/<instance>)")

    p_loc = sub.add_parser("localize", help="print the suspect JSON for the RED failure")
    p_loc.add_argument("--config", type=Path, required=True)

    p_rep = sub.add_parser("repair", help="run the full repair loop")
    p_rep.add_argument("--config", type=Path, required=True)
    p_rep.add_argument("--agent", required=True,
                       help="agent adapter spec, e.g. scripted:transcript.json")
    p_rep.add_argument("--run-dir", type=Path, default=None,
                       help="override the run directory")

    p_met = sub.add_parser("metrics", help="aggregate previously written run reports")
    p_met.add_argument("--reports", type=Path, required=True,
                       help="directory scanned recursively for report.json files")
    p_met.add_argument("--ground-truth", type=Path, default=None,
                       help="JSON map instance_id -> [modified files] for Hit@3")
    p_met.add_argument("--out-dir", type=Path, default=None,
                       help="write metrics.csv and figures/ here")
    p_met.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")
    return parser


def _cmd_index(args) -> int:
    globs = tuple(args.glob) if args.glob else ("**/*.py",)
    index = build_index(args.repo, LanguageConfig(language=args.lang, globs=globs))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    index.save(args.out)
    print(f"indexed {len(index.spans)} spans, {len(index.edges)} edges -> {args.out}")
    return EXIT_OK


def _cmd_red(args) -> int:
    cfg = load_config(args.config)
    out_dir = args.out_dir or (cfg.runs_dir / cfg.instance_id)
    evidence = run_red(cfg.repo, cfg.target_tests, cfg.runner)
    persist_red(evidence, Path(out_dir))
    print(f"RED reproduced ({evidence.outcome}); evidence in {out_dir}")
    return EXIT_OK


def _cmd_localize(args) -> int:
    cfg = load_config(args.config)
    evidence = run_red(cfg.repo, cfg.target_tests, cfg.runner)
    from .index import build_index as _build

    index = _build(cfg.repo, cfg.language)
    suspects = localize(evidence, index, cfg.k, cfg.expansion)
    print(json.dumps(to_localization_json(suspects, evidence), indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_repair(args) -> int:
    cfg = load_config(args.config)
    adapter = load_adapter(args.agent)
    report = run_repair(cfg, adapter, run_dir=args.run_dir)
    print(render_human(report), end="")
    return EXIT_OK if report.accepted else EXIT_UNRESOLVED


def _collect_reports(root: Path) -> list[RunReport]:
    paths = sorted(root.rglob("report.json"))
    if not paths:
        raise ConfigError(f"no report.json files under {root}")
    return [RunReport.load(p) for p in paths]


def _cmd_metrics(args) -> int:
    reports = _collect_reports(args.reports)
    truth = None
    if args.ground_truth is not None:
        try:
            truth = json.loads(args.ground_truth.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read ground truth {args.ground_truth}: {exc}") from exc
    summary = compute_metrics(reports, truth)
    print(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    if args.out_dir is not None:
        from .figures import render_metrics_figures, write_metrics_csv

        csv_path = write_metrics_csv(reports, args.out_dir / "metrics.csv")
        print(f"wrote {csv_path}", file=sys.stderr)
        if not args.no_figures:
            for fig_path in render_metrics_figures(reports, summary, args.out_dir / "figures"):
                print(f"wrote {fig_path}", file=sys.stderr)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {
        "index": _cmd_index,
        "red": _cmd_red,
        "localize": _cmd_localize,
        "repair": _cmd_repair,
        "metrics": _cmd_metrics,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, GrammarUnavailable) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EviactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNRESOLVED


if __name__ == "__main__":
    sys.exit(main())
