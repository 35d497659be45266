"""Unified diff parsing, strict application, and generation.

Application is deliberately fuzz-free: every context and deletion line must
match the target exactly at the hunk's stated position, so gate outcomes are
reproducible and diagnostics point at a definite hunk. Hunks of one diff are
invertible, which lets a patch be reverse-applied to restore the original.
"""

from __future__ import annotations

import difflib
import re
from dataclasses import dataclass, field


class DiffParseError(ValueError):
    """The text is not a well-formed unified diff."""


class HunkApplyError(ValueError):
    """A hunk's context or deletions did not match the target file."""

    def __init__(self, hunk_index: int, message: str):
        super().__init__(message)
        self.hunk_index = hunk_index


@dataclass
class Hunk:
    old_start: int
    old_len: int
    new_start: int
    new_len: int
    lines: list[tuple[str, str]] = field(default_factory=list)  # (tag, text), tag in " -+"

    def inverted(self) -> Hunk:
        flipped = {"+": "-", "-": "+", " ": " "}
        return Hunk(
            old_start=self.new_start,
            old_len=self.new_len,
            new_start=self.old_start,
            new_len=self.old_len,
            lines=[(flipped[tag], text) for tag, text in self.lines],
        )


@dataclass
class FileDiff:
    old_path: str  # "/dev/null" for file creation
    new_path: str  # "/dev/null" for file deletion
    hunks: list[Hunk] = field(default_factory=list)

    @property
    def target_path(self) -> str:
        return self.new_path if self.new_path != "/dev/null" else self.old_path

    def inverted(self) -> FileDiff:
        return FileDiff(
            old_path=self.new_path,
            new_path=self.old_path,
            hunks=[h.inverted() for h in self.hunks],
        )


_GIT_HEADER = re.compile(r"^diff --git (?:a/)?(\S+) (?:b/)?(\S+)\s*$")
_HUNK_HEADER = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")
_NO_NEWLINE = "\\ No newline at end of file"


def _strip_prefix(path: str) -> str:
    if path == "/dev/null":
        return path
    if path.startswith(("a/", "b/")):
        return path[2:]
    return path


def parse_unified_diff(text: str) -> list[FileDiff]:
    """Parse a "diff --git" style unified diff into file diffs."""
    if not text.startswith("diff --git"):
        raise DiffParseError('unified diff must begin with "diff --git"')
    diffs: list[FileDiff] = []
    current: FileDiff | None = None
    hunk: Hunk | None = None
    old_left = new_left = 0  # lines still owed to the open hunk

    for line in text.splitlines():
        if hunk is not None and (old_left > 0 or new_left > 0):
            tag = line[:1] if line else " "
            body = line[1:] if line else ""
            if tag == " ":
                old_left -= 1
                new_left -= 1
            elif tag == "-":
                old_left -= 1
            elif tag == "+":
                new_left -= 1
            elif line == _NO_NEWLINE:
                continue
            else:
                raise DiffParseError(f"hunk interrupted by {line!r}")
            if old_left < 0 or new_left < 0:
                raise DiffParseError("hunk carries more lines than its header declares")
            hunk.lines.append((tag, body))
            continue

        hunk = None
        header = _GIT_HEADER.match(line)
        if header:
            current = FileDiff(old_path=header.group(1), new_path=header.group(2))
            diffs.append(current)
            continue
        if line == "" or line == _NO_NEWLINE:
            continue
        if current is None:
            raise DiffParseError(f"content before any diff header: {line!r}")
        if line.startswith("--- "):
            current.old_path = _strip_prefix(line[4:].split("\t")[0].strip())
            continue
        if line.startswith("+++ "):
            current.new_path = _strip_prefix(line[4:].split("\t")[0].strip())
            continue
        m = _HUNK_HEADER.match(line)
        if m:
            hunk = Hunk(
                old_start=int(m.group(1)),
                old_len=int(m.group(2)) if m.group(2) is not None else 1,
                new_start=int(m.group(3)),
                new_len=int(m.group(4)) if m.group(4) is not None else 1,
            )
            old_left, new_left = hunk.old_len, hunk.new_len
            current.hunks.append(hunk)
            continue
        if line.startswith(("index ", "old mode", "new mode", "new file mode",
                            "deleted file mode", "similarity ", "rename ", "copy ",
                            "Binary files")):
            continue
        raise DiffParseError(f"unparseable diff line: {line!r}")

    if hunk is not None and (old_left > 0 or new_left > 0):
        raise DiffParseError("diff ends inside a hunk")
    for d in diffs:
        if not d.hunks:
            raise DiffParseError(f"diff for {d.target_path} has no hunks")
    return diffs


def apply_hunks(original_lines: list[str], hunks: list[Hunk]) -> list[str]:
    """Apply hunks to a list of lines (no terminators). Exact match only."""
    out: list[str] = []
    cursor = 0  # index into original_lines
    for idx, hunk in enumerate(hunks):
        # old_start is 1-based; a zero old_len hunk addresses the line *after* old_start
        anchor = hunk.old_start - 1 if hunk.old_len > 0 else hunk.old_start
        if anchor < cursor:
            raise HunkApplyError(idx, f"hunk {idx} overlaps an earlier hunk")
        if anchor > len(original_lines):
            raise HunkApplyError(idx, f"hunk {idx} starts beyond end of file")
        out.extend(original_lines[cursor:anchor])
        cursor = anchor
        for tag, text in hunk.lines:
            if tag == " ":
                if cursor >= len(original_lines) or original_lines[cursor] != text:
                    found = original_lines[cursor] if cursor < len(original_lines) else "<eof>"
                    raise HunkApplyError(
                        idx, f"context mismatch at line {cursor + 1}: "
                             f"expected {text!r}, found {found!r}"
                    )
                out.append(text)
                cursor += 1
            elif tag == "-":
                if cursor >= len(original_lines) or original_lines[cursor] != text:
                    found = original_lines[cursor] if cursor < len(original_lines) else "<eof>"
                    raise HunkApplyError(
                        idx, f"deletion mismatch at line {cursor + 1}: "
                             f"expected {text!r}, found {found!r}"
                    )
                cursor += 1
            else:  # "+"
                out.append(text)
    out.extend(original_lines[cursor:])
    return out


def apply_file_diff(original: str, file_diff: FileDiff) -> str:
    """Apply one file's hunks to its text content (LF line endings)."""
    had_trailing_newline = original.endswith("\n") or original == ""
    lines = original.split("\n")
    if had_trailing_newline and lines and lines[-1] == "":
        lines.pop()
    patched = apply_hunks(lines, file_diff.hunks)
    text = "\n".join(patched)
    if patched and had_trailing_newline:
        text += "\n"
    return text


def reverse_file_diff(patched: str, file_diff: FileDiff) -> str:
    """Undo a previously applied file diff, restoring the original text."""
    return apply_file_diff(patched, file_diff.inverted())


def generate_unified_diff(rel_path: str, old_text: str, new_text: str,
                          context: int = 3) -> str:
    """Produce a "diff --git" unified diff between two versions of one file."""
    old_lines = old_text.splitlines(keepends=True)
    new_lines = new_text.splitlines(keepends=True)
    body = "".join(
        difflib.unified_diff(
            old_lines, new_lines,
            fromfile=f"a/{rel_path}", tofile=f"b/{rel_path}", n=context,
        )
    )
    if not body:
        return ""
    if not body.endswith("\n"):
        body += f"\n{_NO_NEWLINE}\n"
    return f"diff --git a/{rel_path} b/{rel_path}\n{body}"
