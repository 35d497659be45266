"""GREEN re-execution and full-regression validation of a compiled patch.

Acceptance is the product of two indicators: the originally failing target
tests must pass on the patched workspace, and only then does the full
regression suite run. A GREEN failure returns fresh evidence for refinement
and never launches regression.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .evidence import RedEvidence, parse_failure_log, run_target_tests
from .runner import RunnerConfig, run_test_command

logger = logging.getLogger(__name__)


@dataclass
class VerifyOutcome:
    """Result of the two-stage test-driven gate for one candidate."""

    green_passed: bool
    regression_passed: bool | None = None  # absent when GREEN failed
    green_evidence: RedEvidence | None = None
    regression_log: str = ""
    accepted: bool = False
    green_log: str = ""
    target_test_ids: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.green_passed and self.regression_passed is not None:
            raise ValueError("regression must not run after a GREEN failure")
        if self.accepted != (self.green_passed and self.regression_passed is True):
            raise ValueError("accepted must equal GREEN pass AND regression pass")

    def to_dict(self) -> dict:
        return {
            "green_passed": self.green_passed,
            "regression_passed": self.regression_passed,
            "accepted": self.accepted,
            "target_test_ids": list(self.target_test_ids),
        }


def run_green(workspace: Path | str, target_tests: list[str],
              cfg: RunnerConfig) -> tuple[bool, RedEvidence | None, str]:
    """Re-run exactly the RED target tests on the patched workspace.

    Returns (passed, evidence, raw_log); evidence is present only on failure
    and carries the same parsed shape the RED phase produces.
    """
    outcomes, raw_log = run_target_tests(workspace, target_tests, cfg)
    if all(o == "passed" for o in outcomes.values()):
        return True, None, raw_log
    parsed = parse_failure_log(raw_log, cfg.log_format)
    evidence = RedEvidence(
        test_ids=list(target_tests),
        error_message=parsed.error_message,
        assertion_text=parsed.assertion_text,
        frames=parsed.frames,
        raw_log=raw_log,
        outcome="failed" if any(o == "failed" for o in outcomes.values()) else "error",
        file_line_refs=parsed.file_line_refs,
        per_test_outcomes=outcomes,
    )
    return False, evidence, raw_log


_PYTEST_FAILED = re.compile(r"(\d+) failed")
_PYTEST_ERRORS = re.compile(r"(\d+) errors?\b")
_UNITTEST_SUMMARY = re.compile(r"FAILED \((?:[a-z]+=\d+(?:, )?)+\)")


def _summary_reports_failure(log: str) -> bool:
    m = _PYTEST_FAILED.search(log)
    if m and int(m.group(1)) > 0:
        return True
    if _UNITTEST_SUMMARY.search(log):
        return True
    return False


def run_regression(workspace: Path | str, cfg: RunnerConfig) -> tuple[bool, str]:
    """Run the configured full suite. Exit status is primary; the parsed
    summary acts as a consistency check — a zero exit with a failing summary
    is treated as a failure with a diagnostic.
    """
    if not cfg.regression_command:
        logger.warning("no regression command configured; suite passes vacuously")
        return True, "regression suite not configured; passing vacuously"
    result = run_test_command(cfg.regression_command, workspace=workspace,
                              timeout=cfg.regression_timeout_s, env=cfg.env)
    log = result.output
    if result.exit_code != 0:
        return False, log
    if _summary_reports_failure(log):
        return False, log + "\n[diagnostic] runner exited 0 but its summary reports failures"
    return True, log


def td_gate(workspace: Path | str, target_tests: list[str], cfg: RunnerConfig,
            events=None) -> VerifyOutcome:
    """GREEN before regression; accepted only when both pass.

    *events*, when given, is called as events(name, payload) so the caller's
    trajectory records the ordering this gate enforces.
    """
    emit = events or (lambda name, payload: None)
    passed, evidence, green_log = run_green(workspace, target_tests, cfg)
    emit("green", {"passed": passed, "test_ids": list(target_tests)})
    if not passed:
        return VerifyOutcome(
            green_passed=False,
            green_evidence=evidence,
            green_log=green_log,
            target_test_ids=list(target_tests),
        )
    reg_passed, reg_log = run_regression(workspace, cfg)
    emit("regression", {"passed": reg_passed})
    return VerifyOutcome(
        green_passed=True,
        regression_passed=reg_passed,
        regression_log=reg_log,
        accepted=reg_passed,
        green_log=green_log,
        target_test_ids=list(target_tests),
    )
