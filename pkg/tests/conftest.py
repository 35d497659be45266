from __future__ import annotations

import random
from pathlib import Path

import pytest

import corpus
from eviact.index import Edge, Index, LanguageConfig, Span, build_index


@pytest.fixture()
def calc_repo(tmp_path: Path) -> Path:
    """Buggy calc fixture repo (structured-fix blueprint)."""
    return corpus.materialize(corpus.blueprint_by_id("calc-add"), tmp_path / "calc-repo")


@pytest.fixture()
def calc_blueprint() -> corpus.Blueprint:
    return corpus.blueprint_by_id("calc-add")


@pytest.fixture()
def mini_repo(tmp_path: Path) -> Path:
    """A hand-written three-file repo for index/scaffold unit tests."""
    repo = tmp_path / "mini"
    (repo / "pkg").mkdir(parents=True)
    (repo / "pkg" / "__init__.py").write_text("")
    (repo / "pkg" / "a.py").write_text(
        "import os\n"
        "from pkg.b import helper\n"
        "\n"
        "\n"
        "class Widget:\n"
        "    def render(self, x):\n"
        "        return helper(x) + 1\n"
        "\n"
        "    def hidden(self):\n"
        "        return 0\n"
        "\n"
        "\n"
        "def run(y):\n"
        "    return Widget().render(y)\n"
    )
    (repo / "pkg" / "b.py").write_text(
        "def helper(x):\n"
        "    return x * 2\n"
        "\n"
        "\n"
        "def lonely():\n"
        "    return None\n"
    )
    return repo


def make_random_index(rng: random.Random, max_spans: int = 50) -> Index:
    """A structurally valid random index for oracle-equivalence tests."""
    n_files = rng.randint(1, 5)
    spans: list[Span] = []
    for fi in range(n_files):
        file_rel = f"src/mod{fi}.py"
        file_len = rng.randint(20, 120)
        spans.append(Span(
            id=file_rel, file=file_rel, start_line=1, end_line=file_len,
            kind="file", symbol=f"mod{fi}.py", qualified_symbol=f"src.mod{fi}",
            descriptor=f"file {file_rel}",
        ))
        n_defs = rng.randint(0, 8)
        cursor = 2
        for di in range(n_defs):
            if cursor >= file_len:
                break
            length = rng.randint(1, 9)
            end = min(file_len, cursor + length)
            kind = rng.choice(["function", "method", "class"])
            sym = f"sym{rng.randint(0, 14)}"
            spans.append(Span(
                id=f"{file_rel}::{sym}@{cursor}", file=file_rel,
                start_line=cursor, end_line=end, kind=kind, symbol=sym,
                qualified_symbol=f"M{fi}.{sym}",
                content=f"def {sym}(): token{rng.randint(0, 9)}",
                parent=file_rel,
            ))
            cursor = end + rng.randint(1, 4)
        if len(spans) >= max_spans:
            break
    spans = spans[:max_spans]
    ids = [s.id for s in spans]
    edges = set()
    for _ in range(rng.randint(0, len(ids) * 2)):
        src, dst = rng.choice(ids), rng.choice(ids)
        kind = rng.choice(["call", "import", "inheritance", "containment"])
        if kind == "containment":
            continue  # containment must mirror parent links; skip random ones
        edges.add(Edge(src=src, dst=dst, kind=kind))
    for s in spans:
        if s.parent is not None:
            edges.add(Edge(src=s.parent, dst=s.id, kind="containment"))
    return Index(spans=spans, edges=sorted(edges, key=lambda e: (e.kind, e.src, e.dst)),
                 repo_root="/virtual", language="python")


@pytest.fixture()
def mini_index(mini_repo: Path) -> Index:
    return build_index(mini_repo, LanguageConfig())
