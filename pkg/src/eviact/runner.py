"""Sandboxed subprocess execution of test commands.

Commands are string templates with ``{test_id}`` and ``{workspace}``
placeholders, run with ``shell=False`` in the workspace directory. Stdout and
stderr are captured separately and merged with stream tags so assertion text
is never lost regardless of which stream a framework writes to.
"""

from __future__ import annotations

import os
import shlex
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import RunnerLaunchFailure, TestTimeout


@dataclass
class RunnerConfig:
    """Test-command templates and execution limits for one repository."""

    red_command: str
    regression_command: str | None = None
    timeout_s: float = 300.0
    regression_timeout_s: float = 900.0
    log_format: str = "python-traceback"
    failure_exit_codes: tuple[int, ...] = (1,)
    env: dict[str, str] | None = None


@dataclass
class CommandResult:
    exit_code: int
    output: str  # stream-tagged merge of stdout and stderr
    duration_s: float
    command: list[str] = field(default_factory=list)


def render_command(template: str, workspace: Path | str, test_id: str | None = None) -> list[str]:
    try:
        rendered = template.format(test_id=test_id or "", workspace=str(workspace))
    except (KeyError, IndexError) as exc:
        raise RunnerLaunchFailure(f"bad command template {template!r}: {exc}") from exc
    argv = shlex.split(rendered)
    if not argv:
        raise RunnerLaunchFailure(f"command template {template!r} rendered empty")
    return argv


def run_test_command(template: str, workspace: Path | str, *, test_id: str | None = None,
                     timeout: float = 300.0, env: dict[str, str] | None = None) -> CommandResult:
    """Run one test command to completion inside *workspace*."""
    argv = render_command(template, workspace, test_id)
    merged_env = dict(os.environ)
    merged_env["PYTHONDONTWRITEBYTECODE"] = "1"  # keep checkouts byte-stable
    if env:
        merged_env.update(env)
    start = time.monotonic()
    try:
        proc = subprocess.run(
            argv,
            cwd=str(workspace),
            capture_output=True,
            timeout=timeout,
            shell=False,
            env=merged_env,
        )
    except subprocess.TimeoutExpired as exc:
        raise TestTimeout(f"{' '.join(argv)} exceeded {timeout}s") from exc
    except (FileNotFoundError, PermissionError, OSError) as exc:
        raise RunnerLaunchFailure(f"cannot launch {' '.join(argv)}: {exc}") from exc
    duration = time.monotonic() - start
    out = proc.stdout.decode("utf-8", errors="replace")
    err = proc.stderr.decode("utf-8", errors="replace")
    output = f"[stdout]\n{out}\n[stderr]\n{err}"
    return CommandResult(exit_code=proc.returncode, output=output,
                         duration_s=duration, command=argv)
