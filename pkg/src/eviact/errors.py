"""Exception types shared across the repair pipeline."""

from __future__ import annotations


class EviactError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(EviactError):
    """Run configuration is missing, unreadable, or invalid."""


# --- indexing ---------------------------------------------------------------


class RepoNotFound(EviactError):
    """The repository root does not exist."""


class NoMatchingFiles(EviactError):
    """No file under the repository root matched the configured globs."""


class GrammarUnavailable(EviactError):
    """The requested language has no configured grammar."""


class MalformedForest(EviactError):
    """Span containment links contain a cycle or an orphan parent reference."""


# --- test execution ---------------------------------------------------------


class RedUnexpectedlyPassed(EviactError):
    """Target tests pass on the unmodified checkout; nothing to repair."""

    def __init__(self, test_ids: list[str]):
        super().__init__(f"target tests passed on the clean checkout: {', '.join(test_ids)}")
        self.test_ids = list(test_ids)


class TestTimeout(EviactError):
    """A test command exceeded its configured timeout."""


class RunnerLaunchFailure(EviactError):
    """The test command could not be launched at all."""


# --- localization -----------------------------------------------------------


class NoSeedsFound(EviactError):
    """No span matched any failure signal on any seed tier."""


class LocalizationEmpty(EviactError):
    """Seed matching and the file-span fallback both produced nothing."""


# --- patching ---------------------------------------------------------------


class MalformedCandidate(EviactError):
    """A candidate patch is neither structured-edit JSON nor a unified diff."""


class ApplyError(EviactError):
    """A candidate patch could not be applied to the workspace copy.

    ``reason`` is one of: missing_file, range_out_of_bounds, context_mismatch,
    overlapping_ops, protected_path, invalid_path.
    """

    def __init__(self, reason: str, file: str, index: int | None = None, detail: str = ""):
        msg = f"{reason}: {file}"
        if index is not None:
            msg += f" (op/hunk {index})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.reason = reason
        self.file = file
        self.index = index
        self.detail = detail


# --- orchestration ----------------------------------------------------------


class SetupFailure(EviactError):
    """Index construction or RED reproduction failed during Setup."""


class BudgetExhausted(EviactError):
    """A charge was requested for a budget kind whose cap is already reached."""

    def __init__(self, kind: str):
        super().__init__(f"{kind} budget exhausted")
        self.kind = kind


class WallClockExpired(EviactError):
    """The run's wall-clock limit elapsed."""


class AgentUnreachable(EviactError):
    """The agent adapter kept raising after all configured retries."""


# --- reporting --------------------------------------------------------------


class GroundTruthMismatch(EviactError):
    """Hit@3 was requested but a report's instance id is missing from the map."""


class IoFailure(EviactError):
    """A report file could not be written."""
