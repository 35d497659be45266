from __future__ import annotations

import ast
import random
from pathlib import Path

import pytest

from eviact.errors import GrammarUnavailable, MalformedForest, NoMatchingFiles, RepoNotFound
from eviact.index import (
    DESCRIPTOR_CAP,
    Edge,
    Index,
    LanguageConfig,
    Span,
    build_code_graph,
    build_index,
    compress_spans,
    parse_spans,
)


def write_repo(root: Path, files: dict[str, str]) -> Path:
    for rel, content in files.items():
        p = root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(content)
    return root


class TestParseSpans:
    def test_single_function_file(self, tmp_path):
        repo = write_repo(tmp_path, {"a.py": "def f():\n    x = 1\n    return x\n"})
        spans, _ = parse_spans(repo)
        by_kind = {s.kind: s for s in spans}
        assert set(by_kind) == {"file", "function"}
        assert by_kind["file"].start_line == 1 and by_kind["file"].end_line == 3
        f = by_kind["function"]
        assert (f.symbol, f.start_line, f.end_line, f.parent) == ("f", 1, 3, "a.py")

    def test_class_method_containment_chain(self, tmp_path):
        repo = write_repo(tmp_path, {
            "c.py": "class C:\n    def m(self):\n        return 1\n"
        })
        spans, _ = parse_spans(repo)
        by_symbol = {s.symbol: s for s in spans}
        assert len(spans) == 3
        assert by_symbol["m"].kind == "method"
        assert by_symbol["m"].parent == by_symbol["C"].id
        assert by_symbol["C"].parent == "c.py"
        # child ranges nest inside parents
        assert by_symbol["C"].start_line <= by_symbol["m"].start_line
        assert by_symbol["m"].end_line <= by_symbol["C"].end_line

    def test_unparseable_file_degrades_to_descriptor(self, tmp_path):
        repo = write_repo(tmp_path, {"bad.py": "def broken(:\n"})
        spans, _ = parse_spans(repo)
        assert len(spans) == 1
        assert spans[0].kind == "file" and spans[0].descriptor == "parse-failed"

    def test_missing_repo(self, tmp_path):
        with pytest.raises(RepoNotFound):
            parse_spans(tmp_path / "nope")

    def test_no_matching_files(self, tmp_path):
        (tmp_path / "readme.txt").write_text("hi")
        with pytest.raises(NoMatchingFiles):
            parse_spans(tmp_path)

    def test_unknown_grammar(self, tmp_path):
        (tmp_path / "x.py").write_text("pass\n")
        with pytest.raises(GrammarUnavailable):
            parse_spans(tmp_path, LanguageConfig(language="cobol"))


def _oracle_definition_count(repo: Path) -> int:
    """Independent second-pass enumerator: files + def/class nodes."""
    count = 0
    for path in repo.rglob("*.py"):
        count += 1  # the file span
        tree = ast.parse(path.read_text())
        for node in ast.walk(tree):
            if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
                count += 1
    return count


def make_synthetic_repo(root: Path, n_files: int = 40, seed: int = 7) -> Path:
    rng = random.Random(seed)
    for i in range(n_files):
        parts = []
        for j in range(rng.randint(0, 3)):
            parts.append(f"def fn_{i}_{j}(x):\n    return helper_{i}(x)\n")
        if rng.random() < 0.5:
            methods = "".join(
                f"    def m{k}(self):\n        return {k}\n"
                for k in range(rng.randint(1, 3))
            )
            parts.append(f"class K{i}:\n{methods}")
        parts.append(f"def helper_{i}(x):\n    return x + {i}\n")
        (root / f"m{i:02d}.py").write_text("\n\n".join(parts))
    return root


class TestFixtureOracle:
    def test_span_count_matches_independent_walker(self, tmp_path):
        repo = make_synthetic_repo(tmp_path)
        spans, _ = parse_spans(repo)
        assert len(spans) == _oracle_definition_count(repo)

    def test_determinism_byte_identical(self, tmp_path):
        repo = make_synthetic_repo(tmp_path)
        a = build_index(repo).to_json()
        b = build_index(repo).to_json()
        assert a == b

    def test_serialization_round_trip(self, tmp_path):
        repo = make_synthetic_repo(tmp_path)
        index = build_index(repo)
        again = Index.from_json(index.to_json())
        assert again.spans == index.spans
        assert again.edges == index.edges
        assert again.to_json() == index.to_json()


class TestCompress:
    def test_class_descriptor_lists_members(self, mini_index):
        widget = next(s for s in mini_index.spans if s.symbol == "Widget")
        assert widget.content == ""
        assert "render" in widget.descriptor and "hidden" in widget.descriptor
        assert "class Widget" in widget.descriptor

    def test_leaf_retention(self, mini_index):
        for span in mini_index.spans:
            if span.kind in ("method", "function"):
                assert span.content, span.id
                assert span.descriptor == ""

    def test_exactly_one_of_content_descriptor(self, mini_index):
        for span in mini_index.spans:
            if span.kind == "file":
                assert span.descriptor and not span.content
            else:
                assert bool(span.content) != bool(span.descriptor), span.id

    def test_idempotent(self, tmp_path):
        repo = make_synthetic_repo(tmp_path)
        spans, _ = parse_spans(repo)
        once = compress_spans(spans)
        twice = compress_spans(once)
        assert once == twice

    def test_descriptor_capped(self, tmp_path):
        methods = "".join(
            f"    def very_long_method_name_{i:04d}(self, argument_{i}):\n"
            f"        return {i}\n" for i in range(200)
        )
        repo = write_repo(tmp_path, {"big.py": f"class Big:\n{methods}"})
        index = build_index(repo)
        big = next(s for s in index.spans if s.symbol == "Big")
        assert len(big.descriptor) <= DESCRIPTOR_CAP
        assert big.descriptor.endswith("...")

    def test_malformed_forest_orphan(self):
        bad = [Span(id="x", file="f.py", start_line=1, end_line=2, kind="function",
                    symbol="x", parent="ghost")]
        with pytest.raises(MalformedForest):
            compress_spans(bad)

    def test_malformed_forest_cycle(self):
        a = Span(id="a", file="f.py", start_line=1, end_line=9, kind="class",
                 symbol="a", parent="b")
        b = Span(id="b", file="f.py", start_line=1, end_line=9, kind="class",
                 symbol="b", parent="a")
        with pytest.raises(MalformedForest):
            compress_spans([a, b])


class TestCodeGraph:
    def test_call_edge_same_repo(self, mini_index):
        render = next(s for s in mini_index.spans if s.symbol == "render")
        helper = next(s for s in mini_index.spans if s.symbol == "helper")
        assert Edge(src=render.id, dst=helper.id, kind="call") in mini_index.edges

    def test_import_edge(self, mini_index):
        assert Edge(src="pkg/a.py", dst="pkg/b.py", kind="import") in mini_index.edges

    def test_containment_edges_match_parent_links(self, mini_index):
        containment = {(e.src, e.dst) for e in mini_index.edges if e.kind == "containment"}
        expected = {(s.parent, s.id) for s in mini_index.spans if s.parent is not None}
        assert containment == expected

    def test_referential_integrity(self, mini_index):
        ids = {s.id for s in mini_index.spans}
        for e in mini_index.edges:
            assert e.src in ids and e.dst in ids

    def test_inheritance_edge(self, tmp_path):
        repo = write_repo(tmp_path, {
            "base.py": "class Base:\n    pass\n",
            "child.py": "from base import Base\n\n\nclass Child(Base):\n    pass\n",
        })
        index = build_index(repo)
        child = next(s for s in index.spans if s.symbol == "Child")
        base = next(s for s in index.spans if s.symbol == "Base")
        assert Edge(src=child.id, dst=base.id, kind="inheritance") in index.edges

    def test_edges_match_bruteforce_resolver(self, tmp_path):
        repo = make_synthetic_repo(tmp_path)
        spans, artifacts = parse_spans(repo)
        spans = compress_spans(spans)
        got = {(e.src, e.dst, e.kind) for e in build_code_graph(spans, artifacts)}
        assert got == _bruteforce_edges(spans, artifacts)


def _bruteforce_edges(spans, artifacts) -> set[tuple[str, str, str]]:
    """Quadratic oracle: test every reference against every span."""
    edges: set[tuple[str, str, str]] = set()
    by_id = {s.id: s for s in spans}
    for s in spans:
        if s.parent is not None:
            edges.add((s.parent, s.id, "containment"))

    files = {s.file for s in spans if s.kind == "file"}
    file_ids = {s.file: s.id for s in spans if s.kind == "file"}

    def module_files(mod: str) -> set[str]:
        out = set()
        for f in files:
            dotted = f[:-3].replace("/", ".")
            if dotted.endswith(".__init__"):
                dotted = dotted[: -len(".__init__")]
            if dotted == mod or f[:-3].split("/")[-1] == mod:
                out.add(f)
        return out

    imports = {}
    for path, modules in artifacts.imports_by_file.items():
        targets = set()
        for m in modules:
            targets |= module_files(m)
        imports[path] = targets
        for t in sorted(targets):
            if t != path:
                edges.add((file_ids[path], file_ids[t], "import"))

    def resolve(name: str, from_file: str, kinds) -> list:
        cands = [s for s in spans if s.symbol == name and s.kind in kinds]
        tier0 = [c for c in cands if c.file == from_file]
        if tier0:
            return tier0
        tier1 = [c for c in cands if c.file in imports.get(from_file, set())]
        if tier1:
            return tier1
        return cands

    for sid, called in artifacts.calls_by_span.items():
        src = by_id[sid]
        for name in called:
            for t in resolve(name, src.file, ("function", "method", "class")):
                edges.add((sid, t.id, "call"))
    for sid, bases in artifacts.bases_by_span.items():
        src = by_id[sid]
        for base in bases:
            for t in resolve(base, src.file, ("function", "method", "class")):
                if t.kind == "class" and t.id != sid:
                    edges.add((sid, t.id, "inheritance"))
    return edges


class TestBuildIndex:
    def test_trivial_repo(self, tmp_path):
        repo = write_repo(tmp_path, {"only.py": "x = 1\n"})
        index = build_index(repo)
        assert len(index.spans) == 1
        assert index.spans[0].kind == "file"
        assert index.edges == []

    def test_spans_sorted_for_serialization(self, mini_index):
        keys = [(s.file, s.start_line, s.end_line, s.symbol) for s in mini_index.spans]
        assert keys == sorted(keys)
        ekeys = [(e.kind, e.src, e.dst) for e in mini_index.edges]
        assert ekeys == sorted(ekeys)
