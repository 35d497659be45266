"""Run configuration: one file describing repo, tests, runner, and budgets.

JSON is always accepted; TOML works when the interpreter ships ``tomllib``
(Python 3.11+). Relative paths are resolved against the config file's
directory so fixture bundles stay relocatable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .index import LanguageConfig
from .runner import RunnerConfig
from .scaffold import ExpansionBudget

DEFAULT_PROTECTED_GLOBS = (
    "tests/*", "test/*", "test_*.py", "*_test.py", "**/test_*.py", "**/*_test.py",
)


@dataclass
class BudgetConfig:
    max_localize_calls: int = 36
    max_patch_calls: int = 20
    wall_clock_limit_s: float = 2700.0


@dataclass
class AgentConfig:
    timeout_s: float = 60.0
    retries: int = 2
    benchmark: str = "local"
    # decoding controls forwarded to endpoints that support them
    temperature: float = 1.0
    top_p: float = 1.0


@dataclass
class RepairConfig:
    instance_id: str
    repo: Path
    target_tests: list[str]
    runner: RunnerConfig
    language: LanguageConfig = field(default_factory=LanguageConfig)
    k: int = 3
    expansion: ExpansionBudget = field(default_factory=ExpansionBudget)
    relocalize_threshold: int = 3
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    protected_globs: tuple[str, ...] = DEFAULT_PROTECTED_GLOBS
    build_command: str | None = None
    pricing: dict | None = None  # {"input_per_1k": float, "output_per_1k": float}
    runs_dir: Path = Path("runs")


def _load_document(path: Path) -> dict:
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".toml":
        try:
            import tomllib
        except ImportError:
            raise ConfigError(
                f"{path}: TOML configs need Python 3.11+; use the JSON form instead"
            ) from None
        try:
            return tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_config(path: Path | str) -> RepairConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    doc = _load_document(path)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a table/object")
    base = path.parent

    def resolve(p: str) -> Path:
        raw = Path(p)
        return raw if raw.is_absolute() else (base / raw).resolve()

    try:
        instance_id = str(doc["instance_id"])
        repo = resolve(str(doc["repo"]))
        target_tests = [str(t) for t in doc["target_tests"]]
        runner_doc = dict(doc["runner"])
    except KeyError as exc:
        raise ConfigError(f"{path}: missing required key {exc}") from exc
    if not target_tests:
        raise ConfigError(f"{path}: target_tests must be non-empty")

    try:
        runner = RunnerConfig(
            red_command=str(runner_doc.pop("red_command")),
            regression_command=runner_doc.pop("regression_command", None),
            timeout_s=float(runner_doc.pop("timeout_s", 300.0)),
            regression_timeout_s=float(runner_doc.pop("regression_timeout_s", 900.0)),
            log_format=str(runner_doc.pop("log_format", "python-traceback")),
            failure_exit_codes=tuple(runner_doc.pop("failure_exit_codes", (1,))),
            env={str(k): str(v) for k, v in runner_doc.pop("env", {}).items()} or None,
        )
    except KeyError as exc:
        raise ConfigError(f"{path}: runner section missing {exc}") from exc
    if runner_doc:
        raise ConfigError(f"{path}: unknown runner keys {sorted(runner_doc)}")

    loc = dict(doc.get("localization", {}))
    budget_doc = dict(doc.get("budget", {}))
    agent_doc = dict(doc.get("agent", {}))
    lang_doc = dict(doc.get("language", {}))

    cfg = RepairConfig(
        instance_id=instance_id,
        repo=repo,
        target_tests=target_tests,
        runner=runner,
        language=LanguageConfig(
            language=str(lang_doc.get("language", "python")),
            globs=tuple(lang_doc.get("globs", ("**/*.py",))),
        ),
        k=int(loc.get("k", 3)),
        expansion=ExpansionBudget(
            max_depth=int(loc.get("max_depth", 2)),
            max_nodes=int(loc.get("max_nodes", 200)),
        ),
        relocalize_threshold=int(loc.get("relocalize_threshold", 3)),
        budget=BudgetConfig(
            max_localize_calls=int(budget_doc.get("max_localize_calls", 36)),
            max_patch_calls=int(budget_doc.get("max_patch_calls", 20)),
            wall_clock_limit_s=float(budget_doc.get("wall_clock_limit_s", 2700.0)),
        ),
        agent=AgentConfig(
            timeout_s=float(agent_doc.get("timeout_s", 60.0)),
            retries=int(agent_doc.get("retries", 2)),
            benchmark=str(agent_doc.get("benchmark", "local")),
            temperature=float(agent_doc.get("temperature", 1.0)),
            top_p=float(agent_doc.get("top_p", 1.0)),
        ),
        protected_globs=tuple(doc.get("test_globs", DEFAULT_PROTECTED_GLOBS)),
        build_command=doc.get("build_command"),
        pricing=doc.get("pricing"),
        runs_dir=resolve(str(doc.get("runs_dir", "runs"))),
    )
    if not cfg.repo.is_dir():
        raise ConfigError(f"{path}: repo directory does not exist: {cfg.repo}")
    if cfg.k < 1:
        raise ConfigError(f"{path}: localization.k must be >= 1 (got {cfg.k})")
    if cfg.expansion.max_depth < 0 or cfg.expansion.max_nodes < 1:
        raise ConfigError(f"{path}: expansion bounds must be positive")
    if cfg.budget.max_localize_calls < 0 or cfg.budget.max_patch_calls < 0:
        raise ConfigError(f"{path}: budget caps cannot be negative")
    return cfg
