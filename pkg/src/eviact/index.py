"""Structural repository index: spans, cascaded compression, and the code graph.

The index is built in three deterministic, offline steps:

1. parse source files into structural spans (file / class / method / function),
2. compress higher-level spans into structural descriptors while leaf spans
   keep their executable code,
3. connect spans with containment, call, import, and inheritance edges.

The finished index is immutable, serializes byte-stably (fields and records in
sorted order), and is safe to share across concurrent readers.
"""

from __future__ import annotations

import ast
import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path, PurePosixPath

from .errors import GrammarUnavailable, MalformedForest, NoMatchingFiles, RepoNotFound

logger = logging.getLogger(__name__)

SPAN_KINDS = ("file", "class", "method", "function")
EDGE_KINDS = ("containment", "call", "import", "inheritance")

DESCRIPTOR_CAP = 2000
ELLIPSIS_MARKER = "..."

PARSE_FAILED_DESCRIPTOR = "parse-failed"


@dataclass(frozen=True)
class Span:
    """A structural code unit with a 1-based inclusive line range."""

    id: str
    file: str
    start_line: int
    end_line: int
    kind: str
    symbol: str
    qualified_symbol: str = ""
    signature: str = ""
    content: str = ""
    descriptor: str = ""
    parent: str | None = None

    def __post_init__(self) -> None:
        if not (1 <= self.start_line <= self.end_line):
            raise ValueError(f"bad line range for {self.id}: {self.start_line}..{self.end_line}")
        if self.kind not in SPAN_KINDS:
            raise ValueError(f"unknown span kind {self.kind!r}")

    @property
    def length(self) -> int:
        return self.end_line - self.start_line + 1

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "file": self.file,
            "start_line": self.start_line,
            "end_line": self.end_line,
            "kind": self.kind,
            "symbol": self.symbol,
            "qualified_symbol": self.qualified_symbol,
            "signature": self.signature,
            "content": self.content,
            "descriptor": self.descriptor,
            "parent": self.parent,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Span:
        return cls(**d)


@dataclass(frozen=True)
class Edge:
    """A typed relation between two spans."""

    src: str
    dst: str
    kind: str

    def __post_init__(self) -> None:
        if self.kind not in EDGE_KINDS:
            raise ValueError(f"unknown edge kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"src": self.src, "dst": self.dst, "kind": self.kind}

    @classmethod
    def from_dict(cls, d: dict) -> Edge:
        return cls(**d)


def span_sort_key(s: Span) -> tuple:
    return (s.file, s.start_line, s.end_line, s.symbol)


def edge_sort_key(e: Edge) -> tuple:
    return (e.kind, e.src, e.dst)


@dataclass
class Index:
    """Immutable span-and-edge index of one repository revision."""

    spans: list[Span]
    edges: list[Edge]
    repo_root: str
    language: str
    revision: str | None = None

    def __post_init__(self) -> None:
        self.spans = sorted(self.spans, key=span_sort_key)
        self.edges = sorted(set(self.edges), key=edge_sort_key)
        self._by_id = {s.id: s for s in self.spans}

    def span(self, span_id: str) -> Span:
        return self._by_id[span_id]

    def get(self, span_id: str) -> Span | None:
        return self._by_id.get(span_id)

    def __contains__(self, span_id: str) -> bool:
        return span_id in self._by_id

    def file_spans(self) -> list[Span]:
        return [s for s in self.spans if s.kind == "file"]

    def to_json(self) -> str:
        doc = {
            "repo_root": self.repo_root,
            "revision": self.revision,
            "language": self.language,
            "spans": [s.to_dict() for s in self.spans],
            "edges": [e.to_dict() for e in self.edges],
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> Index:
        doc = json.loads(text)
        return cls(
            spans=[Span.from_dict(d) for d in doc["spans"]],
            edges=[Edge.from_dict(d) for d in doc["edges"]],
            repo_root=doc["repo_root"],
            language=doc["language"],
            revision=doc.get("revision"),
        )

    def save(self, path: Path | str) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> Index:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass
class LanguageConfig:
    """Grammar selection plus the file globs it applies to."""

    language: str = "python"
    globs: tuple[str, ...] = ("**/*.py",)


@dataclass
class ParseArtifacts:
    """Side products of parsing needed for graph construction.

    calls_by_span maps a definition span id to the identifiers it calls,
    bases_by_span maps a class span id to its base-class names, and
    imports_by_file maps a file path to the module names it imports.
    """

    calls_by_span: dict[str, set[str]] = field(default_factory=dict)
    bases_by_span: dict[str, list[str]] = field(default_factory=dict)
    imports_by_file: dict[str, list[str]] = field(default_factory=dict)

    def merge(self, other: ParseArtifacts) -> None:
        self.calls_by_span.update(other.calls_by_span)
        self.bases_by_span.update(other.bases_by_span)
        self.imports_by_file.update(other.imports_by_file)


# --- python grammar (stdlib ast) ---------------------------------------------


class PythonGrammar:
    """Span extraction for Python sources via the stdlib ``ast`` module."""

    language = "python"
    suffixes = (".py",)

    def check_syntax(self, source: str, filename: str) -> str | None:
        """Return a diagnostic string for a syntax error, or None."""
        try:
            ast.parse(source, filename=filename)
            return None
        except SyntaxError as exc:
            return f"{filename}:{exc.lineno}: {exc.msg}"

    def parse_file(self, rel_path: str, source: str) -> tuple[list[Span], ParseArtifacts]:
        lines = source.splitlines()
        n_lines = max(1, len(lines))
        file_id = rel_path
        file_span = Span(
            id=file_id,
            file=rel_path,
            start_line=1,
            end_line=n_lines,
            kind="file",
            symbol=PurePosixPath(rel_path).name,
            qualified_symbol=_module_name(rel_path),
            content=source,
        )
        artifacts = ParseArtifacts()
        try:
            tree = ast.parse(source, filename=rel_path)
        except SyntaxError as exc:
            logger.warning("parse failed for %s: %s", rel_path, exc)
            failed = replace(file_span, content="", descriptor=PARSE_FAILED_DESCRIPTOR)
            return [failed], artifacts

        artifacts.imports_by_file[rel_path] = _collect_imports(tree, rel_path)
        spans = [file_span]
        self._walk(tree.body, rel_path, lines, parent_id=file_id, qualname=(),
                   in_class=False, spans=spans, artifacts=artifacts)
        return spans, artifacts

    def _walk(self, body, rel_path: str, lines: list[str], parent_id: str,
              qualname: tuple[str, ...], in_class: bool,
              spans: list[Span], artifacts: ParseArtifacts) -> None:
        for node in body:
            if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
                name = node.name
                qual = qualname + (name,)
                start = node.lineno
                end = node.end_lineno or start
                span_id = f"{rel_path}::{'.'.join(qual)}@{start}"
                if isinstance(node, ast.ClassDef):
                    kind = "class"
                else:
                    kind = "method" if in_class else "function"
                content = "\n".join(lines[start - 1:end])
                spans.append(Span(
                    id=span_id,
                    file=rel_path,
                    start_line=start,
                    end_line=end,
                    kind=kind,
                    symbol=name,
                    qualified_symbol=".".join(qual),
                    signature=lines[start - 1].strip() if start - 1 < len(lines) else "",
                    content=content,
                    parent=parent_id,
                ))
                artifacts.calls_by_span[span_id] = _direct_calls(node)
                if isinstance(node, ast.ClassDef):
                    artifacts.bases_by_span[span_id] = [
                        b for b in (_base_name(expr) for expr in node.bases) if b
                    ]
                self._walk(node.body, rel_path, lines, parent_id=span_id, qualname=qual,
                           in_class=isinstance(node, ast.ClassDef), spans=spans,
                           artifacts=artifacts)


def _module_name(rel_path: str) -> str:
    p = PurePosixPath(rel_path)
    parts = list(p.with_suffix("").parts)
    if parts and parts[-1] == "__init__":
        parts = parts[:-1]
    return ".".join(parts)


def _collect_imports(tree: ast.Module, rel_path: str) -> list[str]:
    """Imported module names, with relative imports resolved against rel_path."""
    pkg_parts = list(PurePosixPath(rel_path).parent.parts)
    modules: list[str] = []
    for node in ast.walk(tree):
        if isinstance(node, ast.Import):
            modules.extend(alias.name for alias in node.names)
        elif isinstance(node, ast.ImportFrom):
            if node.level == 0:
                if node.module:
                    modules.append(node.module)
                    modules.extend(f"{node.module}.{a.name}" for a in node.names)
            else:
                base = pkg_parts[: len(pkg_parts) - (node.level - 1)]
                prefix = ".".join(base)
                if node.module:
                    prefix = f"{prefix}.{node.module}" if prefix else node.module
                if prefix:
                    modules.append(prefix)
                modules.extend(f"{prefix}.{a.name}" if prefix else a.name for a in node.names)
    seen: set[str] = set()
    out = []
    for m in modules:
        if m and m not in seen:
            seen.add(m)
            out.append(m)
    return out


def _direct_calls(node: ast.AST) -> set[str]:
    """Identifiers called within *node*, excluding nested definition bodies."""
    calls: set[str] = set()

    class Visitor(ast.NodeVisitor):
        def __init__(self) -> None:
            self.depth = 0

        def visit_Call(self, call: ast.Call) -> None:
            if isinstance(call.func, ast.Name):
                calls.add(call.func.id)
            elif isinstance(call.func, ast.Attribute):
                calls.add(call.func.attr)
            self.generic_visit(call)

        def _visit_def(self, inner: ast.AST) -> None:
            if self.depth == 0:
                self.depth += 1
                self.generic_visit(inner)
                self.depth -= 1
            # nested definitions own their calls; skip their bodies

        visit_FunctionDef = _visit_def
        visit_AsyncFunctionDef = _visit_def
        visit_ClassDef = _visit_def

    Visitor().visit(node)
    return calls


def _base_name(expr: ast.expr) -> str:
    if isinstance(expr, ast.Name):
        return expr.id
    if isinstance(expr, ast.Attribute):
        return expr.attr
    return ""


GRAMMARS = {"python": PythonGrammar()}


def get_grammar(language: str) -> PythonGrammar:
    try:
        return GRAMMARS[language]
    except KeyError:
        raise GrammarUnavailable(
            f"no grammar configured for language {language!r}; "
            f"available: {sorted(GRAMMARS)}"
        ) from None


# --- operations ---------------------------------------------------------------


def parse_spans(repo_root: Path | str,
                config: LanguageConfig | None = None) -> tuple[list[Span], ParseArtifacts]:
    """Parse every matching source file into structural spans.

    Unparseable files degrade to a file-level span with a "parse-failed"
    descriptor; they never abort the whole parse.
    """
    root = Path(repo_root)
    if not root.is_dir():
        raise RepoNotFound(str(root))
    config = config or LanguageConfig()
    grammar = get_grammar(config.language)

    files: set[Path] = set()
    for g in config.globs:
        files.update(p for p in root.glob(g) if p.is_file())
    if not files:
        raise NoMatchingFiles(f"no files under {root} match {list(config.globs)}")

    spans: list[Span] = []
    artifacts = ParseArtifacts()
    for path in sorted(files):
        rel = path.relative_to(root).as_posix()
        try:
            source = path.read_text(encoding="utf-8", errors="replace")
        except OSError as exc:
            logger.warning("unreadable file %s: %s", rel, exc)
            continue
        file_spans, file_art = grammar.parse_file(rel, source)
        spans.extend(file_spans)
        artifacts.merge(file_art)
    return spans, artifacts


def _validate_forest(spans: list[Span]) -> dict[str, Span]:
    by_id = {s.id: s for s in spans}
    for s in spans:
        seen = {s.id}
        cur = s
        while cur.parent is not None:
            if cur.parent not in by_id:
                raise MalformedForest(f"span {cur.id} references missing parent {cur.parent}")
            if cur.parent in seen:
                raise MalformedForest(f"containment cycle through {cur.parent}")
            seen.add(cur.parent)
            cur = by_id[cur.parent]
    return by_id


_IMPORT_LINE = re.compile(r"^\s*(?:import\s+\S+|from\s+\S+\s+import\b)", re.MULTILINE)


def compress_spans(spans: list[Span]) -> list[Span]:
    """Cascaded compression: leaves keep code, class/file spans get descriptors.

    Idempotent: a class or file span that already carries a descriptor and no
    content is passed through unchanged.
    """
    by_id = _validate_forest(spans)
    children: dict[str, list[Span]] = {}
    for s in spans:
        if s.parent is not None:
            children.setdefault(s.parent, []).append(s)

    out: list[Span] = []
    for s in spans:
        if s.kind in ("method", "function"):
            out.append(replace(s, descriptor=""))
            continue
        if not s.content and s.descriptor:
            out.append(s)  # already compressed
            continue
        kids = sorted(children.get(s.id, []), key=lambda c: (c.start_line, c.symbol))
        if s.kind == "class":
            desc = _class_descriptor(s, kids)
        else:
            desc = _file_descriptor(s, kids)
        out.append(replace(s, content="", descriptor=_cap(desc)))
    _ = by_id
    return out


def _cap(text: str) -> str:
    if len(text) <= DESCRIPTOR_CAP:
        return text
    return text[: DESCRIPTOR_CAP - len(ELLIPSIS_MARKER)] + ELLIPSIS_MARKER


def _class_descriptor(span: Span, kids: list[Span]) -> str:
    head = span.signature or f"class {span.symbol}:"
    parts = [f"{head} (lines {span.start_line}-{span.end_line}, {len(kids)} members)"]
    for k in kids:
        parts.append(f"  {k.kind} {k.symbol}: {k.signature}")
    return "\n".join(parts)


def _file_descriptor(span: Span, kids: list[Span]) -> str:
    parts = [f"file {span.file} (lines {span.start_line}-{span.end_line})"]
    imports = _IMPORT_LINE.findall(span.content or "")
    if imports:
        parts.append("imports:")
        parts.extend(f"  {line.strip()}" for line in imports)
    if kids:
        parts.append("defines:")
        for k in kids:
            parts.append(f"  {k.kind} {k.symbol}: {k.signature}")
    return "\n".join(parts)


def build_code_graph(spans: list[Span], artifacts: ParseArtifacts) -> list[Edge]:
    """Derive containment, call, import, and inheritance edges.

    Call and inheritance targets resolve by simple name, preferring same-file
    definitions, then definitions in imported files, then any repository-wide
    match. Unresolvable references are dropped (logged at debug level).
    """
    by_id = _validate_forest(spans)
    edges: set[Edge] = set()

    for s in spans:
        if s.parent is not None:
            edges.add(Edge(src=s.parent, dst=s.id, kind="containment"))

    file_span_by_path = {s.file: s for s in spans if s.kind == "file"}
    module_to_file = {}
    for path in file_span_by_path:
        module_to_file[_module_name(path)] = path
        stem = PurePosixPath(path).stem
        module_to_file.setdefault(stem, path)

    imported_files: dict[str, set[str]] = {}
    for path, modules in artifacts.imports_by_file.items():
        targets = set()
        for m in modules:
            target = module_to_file.get(m)
            if target is None:
                logger.debug("unresolved import %s in %s", m, path)
                continue
            targets.add(target)
        imported_files[path] = targets
        src_span = file_span_by_path.get(path)
        if src_span is None:
            continue
        for target in targets:
            if target != path:
                edges.add(Edge(src=src_span.id, dst=file_span_by_path[target].id, kind="import"))

    defs_by_symbol: dict[str, list[Span]] = {}
    for s in spans:
        if s.kind in ("function", "method", "class"):
            defs_by_symbol.setdefault(s.symbol, []).append(s)

    def resolve(name: str, from_file: str) -> list[Span]:
        candidates = defs_by_symbol.get(name, [])
        if not candidates:
            return []
        same_file = [c for c in candidates if c.file == from_file]
        if same_file:
            return same_file
        from_imports = imported_files.get(from_file, set())
        imported = [c for c in candidates if c.file in from_imports]
        if imported:
            return imported
        return candidates

    for span_id, called in artifacts.calls_by_span.items():
        src = by_id.get(span_id)
        if src is None:
            continue
        for name in sorted(called):
            targets = resolve(name, src.file)
            if not targets:
                logger.debug("unresolved call %s from %s", name, span_id)
            for t in targets:
                edges.add(Edge(src=span_id, dst=t.id, kind="call"))

    for span_id, bases in artifacts.bases_by_span.items():
        src = by_id.get(span_id)
        if src is None:
            continue
        for base in bases:
            targets = [t for t in resolve(base, src.file) if t.kind == "class"]
            if not targets:
                logger.debug("unresolved base %s for %s", base, span_id)
            for t in targets:
                if t.id != span_id:
                    edges.add(Edge(src=span_id, dst=t.id, kind="inheritance"))

    return sorted(edges, key=edge_sort_key)


def build_index(repo_root: Path | str, config: LanguageConfig | None = None,
                revision: str | None = None) -> Index:
    """Compose parse -> compress -> graph into a deterministic index."""
    config = config or LanguageConfig()
    raw_spans, artifacts = parse_spans(repo_root, config)
    spans = compress_spans(raw_spans)
    edges = build_code_graph(spans, artifacts)
    return Index(
        spans=spans,
        edges=edges,
        repo_root=Path(repo_root).as_posix(),
        language=config.language,
        revision=revision,
    )
