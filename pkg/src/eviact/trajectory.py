"""Append-only JSON-lines event log for one repair run.

Every stage transition, gate outcome, budget charge, and agent round-trip is
recorded here; report counters must be reconstructible from this log alone.
"""

from __future__ import annotations

import json
import time
from pathlib import Path


class TrajectoryLog:
    """In-memory event list, optionally mirrored to a JSONL file."""

    def __init__(self, path: Path | str | None = None):
        self.path = Path(path) if path is not None else None
        self.events: list[dict] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def emit(self, event: str, **fields) -> dict:
        record = {"event": event, "ts": time.time(), **fields}
        self.events.append(record)
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        return record

    def of_type(self, event: str) -> list[dict]:
        return [e for e in self.events if e["event"] == event]

    @staticmethod
    def load(path: Path | str) -> list[dict]:
        events = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                events.append(json.loads(line))
        return events
