"""Pluggable agent interface: prompt templates, request/response types, and
the scripted replay adapter.

All model interaction goes through this seam. An adapter only has to
implement ``complete(request) -> AgentResponse``; the controller handles
budget charging, per-request timeouts, and failure markers.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .errors import ConfigError

# External model endpoints read their credential from this variable; the
# value must never be echoed into prompts, logs, trajectories, or reports.
CREDENTIALS_ENV_VAR = "EVIACT_AGENT_TOKEN"


def adapter_credentials() -> str | None:
    return os.environ.get(CREDENTIALS_ENV_VAR)

SYSTEM_PROMPT = """\
You are an agentic program repair system for <BENCHMARK>.

Global rules:
- Do not modify, skip, delete, or disable tests.
- Do not hardcode behavior only for the observed failing test.
- Produce minimal and localized patches.
- Preserve the syntax, style, and idioms of <LANGUAGE>.
- Prefer changes that explain the RED failure rather than broad rewrites.

Workflow:
1. Setup: check out the buggy revision and prepare the environment.
2. RED: run the originally failing target test and collect failure evidence.
3. Localize: use RED evidence and the repository index to identify suspicious files, symbols, and line ranges.
4. Patch: generate one minimal candidate edit over the localized working set.
5. Compile: apply the edit and run syntax or build checks.
6. GREEN: rerun the originally failing target test and require it to pass.
7. Validate: run full regression validation before accepting the patch.

When asked to localize, output only the requested localization JSON.
When asked to patch, output only the requested edit JSON or unified diff.
Do not include explanations unless explicitly requested by the controller.
"""

LOCALIZATION_PROMPT = """\
Goal: localize the bug using RED failure evidence and the repository index.

Inputs:
- Workdir: <WORKDIR>
- RED log: <RED_LOG_PATH>
- Repository index: <INDEX_PATH>
- Target language: <LANGUAGE>

Instructions:
1. Read the RED log first.
2. Extract the failing test, assertion or exception message, and relevant stack frames.
3. Derive primary symbols from stack frames, test names, assertion text, and error messages.
4. Query the repository index using symbol lookup before textual search.
5. Read matched AST spans before selecting suspects.
6. Inspect caller, callee, import, inheritance, or reference spans only when they are structurally connected to the RED evidence.
7. Keep the working set small and evidence-grounded.

Current evidence-ranked working set:
<WORKING_SET>

Output only valid JSON in the following schema:
{
  "red_test": "name of the failing target test",
  "red_failure_summary": "one-sentence failure summary",
  "primary_symbols": [
    "symbol names derived from RED evidence"
  ],
  "suspects": [
    {
      "file": "relative/path/to/file",
      "symbol": "class, method, function, or field name",
      "start_line": 1,
      "end_line": 20,
      "evidence": "why this span is connected to the RED failure"
    }
  ],
  "working_set": [
    {
      "file": "relative/path/to/file",
      "symbol": "symbol to inspect or edit"
    }
  ]
}
"""

PATCH_PROMPT = """\
Goal: fix the localized bug with a minimal candidate edit.

Inputs:
- RED evidence: <RED_EVIDENCE>
- Suspect spans: <SUSPECT_SPANS>
- Diagnostic context: <DIAGNOSTIC_CONTEXT>
- Target language: <LANGUAGE>

Instructions:
1. Patch only files that are supported by the suspect spans unless additional context is necessary.
2. Preserve unrelated behavior and avoid broad rewrites.
3. Do not modify tests.
4. Do not hardcode behavior only for the observed failing test.
5. Ensure that the edit applies cleanly and preserves syntax.
6. If the previous candidate failed to apply, compile, or pass GREEN, use the diagnostic context to revise only the relevant part of the patch.

Output only valid JSON in the following schema:
[
  {
    "path": "relative/path/to/file",
    "ops": [
      {
        "type": "replace",
        "start_line": 10,
        "end_line": 12,
        "text": "replacement code with preserved indentation\\n"
      }
    ]
  }
]

The controller also accepts a unified diff if structured edits cannot express the change. In that case, output only the unified diff beginning with "diff --git".
Do not use markdown fences or explanations.
"""


def _fill(template: str, values: dict[str, str]) -> str:
    out = template
    for key, value in values.items():
        out = out.replace(f"<{key}>", value)
    return out


def fill_system_prompt(benchmark: str, language: str) -> str:
    return _fill(SYSTEM_PROMPT, {"BENCHMARK": benchmark, "LANGUAGE": language})


def fill_localization_prompt(workdir: str, red_log_path: str, index_path: str,
                             language: str, working_set: str) -> str:
    return _fill(LOCALIZATION_PROMPT, {
        "WORKDIR": workdir,
        "RED_LOG_PATH": red_log_path,
        "INDEX_PATH": index_path,
        "LANGUAGE": language,
        "WORKING_SET": working_set,
    })


def fill_patch_prompt(red_evidence: str, suspect_spans: str,
                      diagnostic_context: str, language: str) -> str:
    return _fill(PATCH_PROMPT, {
        "RED_EVIDENCE": red_evidence,
        "SUSPECT_SPANS": suspect_spans,
        "DIAGNOSTIC_CONTEXT": diagnostic_context,
        "LANGUAGE": language,
    })


@dataclass
class AgentRequest:
    phase: str  # localize | patch
    prompt: str
    system_prompt: str = ""
    context: dict = field(default_factory=dict)
    attempt: int = 1


@dataclass
class AgentResponse:
    text: str
    usage: dict | None = None  # {"input_tokens": int, "output_tokens": int}
    failed: bool = False
    failure_reason: str | None = None

    @classmethod
    def failure(cls, reason: str) -> AgentResponse:
        return cls(text="", failed=True, failure_reason=reason)


class AgentAdapter(Protocol):
    def complete(self, request: AgentRequest) -> AgentResponse: ...


def _approx_tokens(text: str) -> int:
    return max(1, len(text) // 4)


class ScriptedAgent:
    """Replays a transcript mapping (phase, attempt) to response text.

    Transcript shape: {"localize": ["...", ...], "patch": ["...", ...]}.
    Attempts past the end of a phase list repeat its last entry; an empty
    list yields an explicit agent-failure marker. Token usage is derived
    deterministically from text lengths so replayed runs are reproducible.
    """

    def __init__(self, transcript: dict[str, list[str]]):
        self.transcript = {k: list(v) for k, v in transcript.items()}
        self.calls: dict[str, int] = {}

    @classmethod
    def from_file(cls, path: Path | str) -> ScriptedAgent:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read transcript {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"transcript {path} must be a JSON object")
        return cls({k: [str(t) for t in v] for k, v in doc.items()})

    def complete(self, request: AgentRequest) -> AgentResponse:
        n = self.calls.get(request.phase, 0)
        self.calls[request.phase] = n + 1
        entries = self.transcript.get(request.phase, [])
        if not entries:
            return AgentResponse.failure(f"transcript has no {request.phase} entries")
        text = entries[min(n, len(entries) - 1)]
        return AgentResponse(
            text=text,
            usage={
                "input_tokens": _approx_tokens(request.system_prompt + request.prompt),
                "output_tokens": _approx_tokens(text),
            },
        )


def load_adapter(spec: str) -> AgentAdapter:
    """Resolve a CLI adapter spec such as ``scripted:transcript.json``."""
    kind, _, arg = spec.partition(":")
    if kind == "scripted":
        if not arg:
            raise ConfigError("scripted adapter needs a transcript path: scripted:<file>")
        return ScriptedAgent.from_file(arg)
    raise ConfigError(f"unknown agent adapter {kind!r} (supported: scripted:<file>)")
