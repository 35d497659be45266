"""Evidence-to-suspect localization over the code graph.

Failure evidence is matched to seed spans, the graph is expanded breadth-first
under a bounded budget, and candidates are ordered by a deterministic
lexicographic key: exact symbol match first, then file/line proximity, then
graph distance (closer wins), then relation support in the visited subgraph,
with span length as the final scoring component and (file, start_line) as the
tie-break. The top-K candidates form the suspect set handed to patching.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .errors import LocalizationEmpty, NoSeedsFound
from .evidence import ParsedFailure, RedEvidence
from .index import Index, Span

_IDENTIFIER = re.compile(r"[A-Za-z_][A-Za-z0-9_]{2,}")
_NOISE_TOKENS = {
    "assert", "assertEqual", "self", "None", "True", "False", "line", "File",
    "Error", "Exception", "Traceback", "most", "recent", "call", "last",
    "module", "test", "tests", "stdout", "stderr", "exit", "target",
    "raise", "return", "def", "class", "import", "from", "expected", "but", "was",
}


@dataclass
class FailureSignals:
    """Normalized matchable signals extracted from RED evidence."""

    symbols: set[str] = field(default_factory=set)
    files: set[str] = field(default_factory=set)
    file_lines: set[tuple[str, int]] = field(default_factory=set)
    tokens: set[str] = field(default_factory=set)
    test_ids: list[str] = field(default_factory=list)
    summary: str = ""


def _test_symbols(test_id: str) -> set[str]:
    # "tests/test_x.py::TestC::test_add", "tests.test_x.TestC.test_add",
    # "TestC#test_add" all yield the trailing member plus dotted tails.
    cleaned = test_id.replace("::", ".").replace("#", ".").replace("/", ".")
    if cleaned.endswith(".py"):
        cleaned = cleaned[:-3]
    parts = [p for p in cleaned.split(".") if p and not p.endswith(".py")]
    symbols = set()
    if parts:
        symbols.add(parts[-1])
        if len(parts) >= 2:
            symbols.add(".".join(parts[-2:]))
    return symbols


def signals_from_evidence(evidence: RedEvidence | ParsedFailure,
                          test_ids: list[str] | None = None) -> FailureSignals:
    sig = FailureSignals()
    if isinstance(evidence, RedEvidence):
        test_ids = evidence.test_ids
        message = evidence.error_message
        assertion = evidence.assertion_text or ""
        frames = evidence.frames
        refs = evidence.file_line_refs
    else:
        message = evidence.error_message
        assertion = evidence.assertion_text or ""
        frames = evidence.frames
        refs = evidence.file_line_refs
    sig.test_ids = list(test_ids or [])
    sig.summary = message.splitlines()[0] if message else ""

    for frame in frames:
        if frame.symbol:
            sig.symbols.add(frame.symbol)
        if frame.qualified_symbol:
            sig.symbols.add(frame.qualified_symbol)
        if frame.file:
            sig.files.add(frame.file)
            if frame.line is not None:
                sig.file_lines.add((frame.file, frame.line))
    for f, n in refs:
        sig.files.add(f)
        sig.file_lines.add((f, n))
    for tid in sig.test_ids:
        sig.symbols.update(_test_symbols(tid))
        if "/" in tid or tid.endswith(".py"):
            path_part = tid.split("::")[0]
            sig.files.add(path_part)

    text = f"{message}\n{assertion}"
    for tok in _IDENTIFIER.findall(text):
        if tok not in _NOISE_TOKENS:
            sig.tokens.add(tok)
    return sig


def file_suffix_match(span_file: str, ref_file: str) -> bool:
    """Path-component suffix match, tolerant of unrooted or absolute refs."""
    a = [p for p in span_file.replace("\\", "/").split("/") if p and p != "."]
    b = [p for p in ref_file.replace("\\", "/").split("/") if p and p != "."]
    if not a or not b:
        return False
    shorter, longer = (a, b) if len(a) <= len(b) else (b, a)
    return longer[-len(shorter):] == shorter


@dataclass
class ScoredCandidate:
    """One candidate span with its ranking-key components."""

    span_id: str
    m_sym: int = 0
    m_loc: int = 0
    d_g: int = 0
    r_g: int = 0
    length: int = 1
    evidence_note: str = ""


@dataclass
class ExpansionBudget:
    max_depth: int = 2
    max_nodes: int = 200


@dataclass
class ExpansionStats:
    nodes_visited: int = 0
    depth_reached: int = 0


@dataclass
class SuspectSet:
    """The ordered top-K suspects plus the provenance of their selection."""

    suspects: list[tuple[Span, ScoredCandidate]]
    k: int
    seed_ids: list[str]
    expansion_stats: ExpansionStats = field(default_factory=ExpansionStats)

    def span_ids(self) -> list[str]:
        return [span.id for span, _ in self.suspects]

    def files(self) -> list[str]:
        seen: list[str] = []
        for span, _ in self.suspects:
            if span.file not in seen:
                seen.append(span.file)
        return seen


# --- seed matching --------------------------------------------------------------


def match_seeds(signals: FailureSignals, index: Index) -> list[str]:
    """Match failure signals to seed span ids, strongest tier first.

    Tier (a): exact symbol or qualified-symbol match against frame and
    failing-test symbols. Tier (b): file suffix match with a referenced line
    inside the span's range. Tier (c), only when (a) and (b) are both empty:
    an identifier token from the error or assertion text occurring in the
    span's content or descriptor.
    """
    tier_a: set[str] = set()
    tier_b: set[str] = set()
    for span in index.spans:
        if span.symbol in signals.symbols or (
            span.qualified_symbol and span.qualified_symbol in signals.symbols
        ):
            tier_a.add(span.id)
        for ref_file, ref_line in signals.file_lines:
            if span.start_line <= ref_line <= span.end_line and \
                    file_suffix_match(span.file, ref_file):
                tier_b.add(span.id)
                break
    seeds = tier_a | tier_b
    if seeds:
        return sorted(seeds)

    patterns = [re.compile(rf"\b{re.escape(tok)}\b") for tok in sorted(signals.tokens)]
    tier_c = {
        span.id
        for span in index.spans
        if any(p.search(span.content) or p.search(span.descriptor) for p in patterns)
    }
    if tier_c:
        return sorted(tier_c)
    raise NoSeedsFound("no span matched any failure signal")


# --- expansion --------------------------------------------------------------------


def expand(seeds: list[str], index: Index,
           budget: ExpansionBudget | None = None) -> tuple[list[ScoredCandidate], ExpansionStats]:
    """Bounded breadth-first expansion over the code graph, edges undirected.

    Visit order is deterministic: nodes are taken in sorted-span-id order at
    every level, and expansion stops at max_depth or max_nodes, whichever
    comes first (seeds count toward max_nodes). d_g is the hop distance from
    the nearest seed; r_g counts distinct edges of the visited subgraph
    incident to the candidate.
    """
    budget = budget or ExpansionBudget()
    adjacency: dict[str, set[str]] = {}
    for e in index.edges:
        adjacency.setdefault(e.src, set()).add(e.dst)
        adjacency.setdefault(e.dst, set()).add(e.src)

    visited: dict[str, int] = {}
    frontier = []
    for sid in sorted(set(seeds)):
        if sid in index and len(visited) < budget.max_nodes:
            visited[sid] = 0
            frontier.append(sid)

    depth = 0
    while frontier and depth < budget.max_depth and len(visited) < budget.max_nodes:
        depth += 1
        next_frontier: list[str] = []
        for node in frontier:
            for nb in sorted(adjacency.get(node, ())):
                if nb in visited or nb not in index:
                    continue
                if len(visited) >= budget.max_nodes:
                    break
                visited[nb] = depth
                next_frontier.append(nb)
            if len(visited) >= budget.max_nodes:
                break
        frontier = sorted(next_frontier)

    support: dict[str, int] = {sid: 0 for sid in visited}
    for e in index.edges:
        if e.src in visited and e.dst in visited:
            support[e.src] += 1
            if e.dst != e.src:
                support[e.dst] += 1

    stats = ExpansionStats(
        nodes_visited=len(visited),
        depth_reached=max(visited.values(), default=0),
    )
    candidates = [
        ScoredCandidate(
            span_id=sid,
            d_g=d,
            r_g=support[sid],
            length=index.span(sid).length,
            evidence_note="seed" if d == 0 else f"{d} hop(s) from seed",
        )
        for sid, d in visited.items()
    ]
    return candidates, stats


# --- scoring and ranking -----------------------------------------------------------


def score_candidates(candidates: list[ScoredCandidate], signals: FailureSignals,
                     index: Index) -> list[ScoredCandidate]:
    """Fill the evidence-match components (m_sym, m_loc) of each candidate."""
    for cand in candidates:
        span = index.span(cand.span_id)
        cand.m_sym = int(
            span.symbol in signals.symbols
            or (bool(span.qualified_symbol) and span.qualified_symbol in signals.symbols)
        )
        m_loc = 0
        notes = [cand.evidence_note] if cand.evidence_note else []
        for ref_file in signals.files:
            if file_suffix_match(span.file, ref_file):
                m_loc = 1
                break
        if m_loc:
            for ref_file, ref_line in signals.file_lines:
                if span.start_line <= ref_line <= span.end_line and \
                        file_suffix_match(span.file, ref_file):
                    m_loc = 2
                    break
        cand.m_loc = m_loc
        if cand.m_sym:
            notes.append(f"exact symbol match: {span.symbol}")
        if m_loc == 2:
            notes.append("trace file and line fall inside span")
        elif m_loc == 1:
            notes.append("trace file matches span file")
        cand.evidence_note = "; ".join(notes)
    return candidates


def rank_key(cand: ScoredCandidate, span: Span, demoted: frozenset[str] = frozenset()) -> tuple:
    return (
        -cand.m_sym,
        -cand.m_loc,
        cand.d_g,
        -cand.r_g,
        cand.length,
        1 if cand.span_id in demoted else 0,
        span.file,
        span.start_line,
    )


def rank(candidates: list[ScoredCandidate], index: Index,
         demoted: frozenset[str] = frozenset()) -> list[ScoredCandidate]:
    """Total deterministic order over scored candidates.

    Previously-exhausted suspects in *demoted* sort after untried candidates
    whose ranking keys are otherwise equal; the final tie-break is
    (file path, start_line) ascending.
    """
    return sorted(candidates, key=lambda c: rank_key(c, index.span(c.span_id), demoted))


# --- composition ----------------------------------------------------------------


def localize(evidence: RedEvidence, index: Index, k: int = 3,
             budget: ExpansionBudget | None = None,
             demoted: frozenset[str] = frozenset()) -> SuspectSet:
    """match_seeds -> expand -> rank -> truncate to K.

    When no tier produces seeds, falls back to the file spans of referenced
    files before giving up with LocalizationEmpty.
    """
    signals = signals_from_evidence(evidence)
    try:
        seeds = match_seeds(signals, index)
    except NoSeedsFound:
        fallback = sorted(
            span.id
            for span in index.file_spans()
            if any(file_suffix_match(span.file, ref) for ref in signals.files)
        )
        if not fallback:
            raise LocalizationEmpty(
                "no seeds matched and no referenced file exists in the index"
            ) from None
        seeds = fallback

    if k <= 0:
        return SuspectSet(suspects=[], k=k, seed_ids=seeds)

    candidates, stats = expand(seeds, index, budget)
    candidates = score_candidates(candidates, signals, index)
    ordered = rank(candidates, index, demoted)[:k]
    return SuspectSet(
        suspects=[(index.span(c.span_id), c) for c in ordered],
        k=k,
        seed_ids=seeds,
        expansion_stats=stats,
    )


# --- localization JSON wire format ------------------------------------------------


def to_localization_json(suspects: SuspectSet, evidence: RedEvidence) -> dict:
    """Serialize a suspect set into the localization JSON wire schema."""
    signals = signals_from_evidence(evidence)
    return {
        "red_test": ", ".join(evidence.test_ids),
        "red_failure_summary": signals.summary,
        "primary_symbols": sorted(signals.symbols),
        "suspects": [
            {
                "file": span.file,
                "symbol": span.symbol,
                "start_line": span.start_line,
                "end_line": span.end_line,
                "evidence": cand.evidence_note,
            }
            for span, cand in suspects.suspects
        ],
        "working_set": [
            {"file": span.file, "symbol": span.symbol}
            for span, _ in suspects.suspects
        ],
    }


def parse_localization_json(text: str) -> dict:
    """Validate agent-emitted localization JSON; raises ValueError when unusable."""
    doc = json.loads(text)
    if not isinstance(doc, dict):
        raise ValueError("localization output must be a JSON object")
    suspects = doc.get("suspects")
    if not isinstance(suspects, list) or not suspects:
        raise ValueError("localization output needs a non-empty 'suspects' list")
    for entry in suspects:
        if not isinstance(entry, dict) or "file" not in entry or "symbol" not in entry:
            raise ValueError("each suspect needs 'file' and 'symbol'")
    return doc


def resolve_localization(doc: dict, index: Index) -> list[str]:
    """Map agent suspect entries to span ids; unresolvable entries are dropped."""
    resolved: list[str] = []
    for entry in doc.get("suspects", []):
        ref_file = str(entry.get("file", ""))
        symbol = str(entry.get("symbol", ""))
        start = entry.get("start_line")
        matches = [
            s for s in index.spans
            if s.symbol == symbol and file_suffix_match(s.file, ref_file)
        ]
        if not matches:
            matches = [
                s for s in index.spans
                if s.kind == "file" and file_suffix_match(s.file, ref_file)
            ]
        if not matches:
            continue
        if isinstance(start, int):
            containing = [s for s in matches if s.start_line <= start <= s.end_line]
            if containing:
                matches = containing
        best = sorted(matches, key=lambda s: (s.file, s.start_line))[0]
        if best.id not in resolved:
            resolved.append(best.id)
    return resolved
