"""Query classification, subquery generation, and page/element retrieval.

A query is routed to agent levels by its category; retrieval then runs over
one text unit per page (either concatenated OCR text or the built page
knowledge — the latter is what makes retrieval better than raw OCR) and one
unit per element (verbatim text plus its element knowledge). Sparse scoring
is BM25; dense scoring is cosine over backend embeddings.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import prompts
from .backend import Backend, BackendError, ChatMessage, ChatRequest
from .document import Document
from .knowledge import KnowledgeBase, PromptLogger, call_logged

DEFAULT_K_PAGES = 3
DEFAULT_K_ELEMENTS = 5
BM25_K1 = 1.5
BM25_B = 0.75


class QueryCase(Enum):
    GLOBAL_UNDERSTANDING = "global-understanding"
    FACT_DIRECT = "fact-direct"
    MULTI_HOP = "multi-hop"
    LAYOUT_VISUAL = "layout-visual"
    UNCERTAIN = "uncertain"

    @property
    def agents(self) -> frozenset[str]:
        return AGENT_SETS[self]


AGENT_SETS: dict[QueryCase, frozenset[str]] = {
    QueryCase.GLOBAL_UNDERSTANDING: frozenset({"global"}),
    QueryCase.FACT_DIRECT: frozenset({"page", "element"}),
    QueryCase.MULTI_HOP: frozenset({"global", "page", "element"}),
    QueryCase.LAYOUT_VISUAL: frozenset({"element"}),
    QueryCase.UNCERTAIN: frozenset({"global", "page", "element"}),
}


@dataclass(frozen=True, slots=True)
class QueryPlan:
    query: str
    case: QueryCase
    subqueries: tuple[str, ...] = ()

    def joint_query(self) -> str:
        return " ".join([self.query, *self.subqueries])


@dataclass(frozen=True, slots=True)
class RankedPage:
    page_index: int
    score: float
    source: str


@dataclass(frozen=True, slots=True)
class RankedElement:
    element_id: str
    score: float
    source: str


def classify_query(
    q: str, backend: Backend, logger: PromptLogger | None = None, label: str = "classify"
) -> QueryCase:
    """Map a query to its category; anything unparseable becomes UNCERTAIN."""
    if not q.strip():
        raise ValueError("query must be non-empty")
    req = ChatRequest(
        messages=(ChatMessage.user(prompts.CLASSIFY_INSTRUCTIONS.format(query=q)),)
    )
    try:
        reply = call_logged(backend, req, logger, label)
    except BackendError:
        return QueryCase.UNCERTAIN
    return parse_case(reply)


def parse_case(reply: str) -> QueryCase:
    compact = re.sub(r"[^a-z0-9]+", "", reply.lower())
    if "globalunderstanding" in compact or compact in ("global", "1", "case1"):
        return QueryCase.GLOBAL_UNDERSTANDING
    if "factdirect" in compact or "factbased" in compact or compact in ("fact", "2", "case2"):
        return QueryCase.FACT_DIRECT
    if "multihop" in compact or compact in ("3", "case3"):
        return QueryCase.MULTI_HOP
    if "layout" in compact or "visual" in compact or compact in ("4", "case4"):
        return QueryCase.LAYOUT_VISUAL
    return QueryCase.UNCERTAIN


def generate_subqueries(
    q: str,
    backend: Backend,
    cap: int = 5,
    logger: PromptLogger | None = None,
    label: str = "subqueries",
) -> list[str]:
    """Entity-focused reformulations of q; at most cap, deduplicated, may be empty."""
    if not q.strip():
        raise ValueError("query must be non-empty")
    req = ChatRequest(
        messages=(ChatMessage.user(prompts.SUBQUERY_INSTRUCTIONS.format(query=q, cap=cap)),)
    )
    try:
        reply = call_logged(backend, req, logger, label)
    except BackendError:
        return []
    out: list[str] = []
    seen: set[str] = set()
    for line in reply.splitlines():
        sub = re.sub(r"^\s*(?:[-*•]|\d+[.)])\s*", "", line).strip()
        if not sub:
            continue
        key = sub.casefold()
        if key in seen:
            continue
        seen.add(key)
        out.append(sub)
        if len(out) >= cap:
            break
    return out


def tokenize(text: str) -> list[str]:
    return re.findall(r"\w+", text.lower())


@dataclass
class CorpusStats:
    n_docs: int
    df: dict[str, int]
    avgdl: float


def corpus_stats(token_lists: list[list[str]]) -> CorpusStats:
    df: Counter = Counter()
    for tokens in token_lists:
        df.update(set(tokens))
    n = len(token_lists)
    avgdl = sum(len(t) for t in token_lists) / n if n else 0.0
    return CorpusStats(n_docs=n, df=dict(df), avgdl=avgdl)


def bm25_score(
    query_tokens: list[str],
    doc_tokens: list[str],
    stats: CorpusStats,
    k1: float = BM25_K1,
    b: float = BM25_B,
) -> float:
    """Okapi BM25 with IDF floored at zero.

    Every query token contributes (duplicates count per occurrence).
    """
    tf = Counter(doc_tokens)
    dl = len(doc_tokens)
    norm = k1 * (1 - b + b * dl / stats.avgdl) if stats.avgdl > 0 else k1
    score = 0.0
    for t in query_tokens:
        f = tf.get(t, 0)
        if f == 0:
            continue
        df = stats.df.get(t, 0)
        idf = max(0.0, math.log((stats.n_docs - df + 0.5) / (df + 0.5)))
        score += idf * f * (k1 + 1) / (f + norm)
    return score


class EmbeddingCache:
    """Content-hash keyed embedding store persisted as one JSON file."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._store: dict[str, list[float]] = {}
        if self.path is not None and self.path.is_file():
            self._store = json.loads(self.path.read_text(encoding="utf-8"))

    @staticmethod
    def key(text: str) -> str:
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def lookup(self, texts: list[str], backend: Backend) -> list[list[float]]:
        missing = [t for t in texts if self.key(t) not in self._store]
        if missing:
            vectors = backend.embed(missing)
            for t, v in zip(missing, vectors):
                self._store[self.key(t)] = list(v.values)
            self._save()
        return [self._store[self.key(t)] for t in texts]

    def _save(self) -> None:
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(json.dumps(self._store, sort_keys=True), encoding="utf-8")


def _normalize_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return mat / norms


@dataclass
class TextIndex:
    """Immutable retrieval index: one text unit per key."""

    kind: str  # "pages" or "elements"
    mode: str  # "ocr" or "knowledge" for pages
    retriever: str  # "bm25" or "dense"
    keys: list
    units: list[str]
    tokens: list[list[str]] = field(default_factory=list)
    stats: CorpusStats | None = None
    k1: float = BM25_K1
    b: float = BM25_B
    dense: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.keys)

    def sparse_scores(self, query_tokens: list[str]) -> list[float]:
        return [
            bm25_score(query_tokens, toks, self.stats, self.k1, self.b) for toks in self.tokens
        ]

    def dense_scores(self, query_vector: np.ndarray) -> list[float]:
        q = np.asarray(query_vector, dtype=np.float64)
        norm = np.linalg.norm(q)
        if norm > 0:
            q = q / norm
        return [float(s) for s in self.dense @ q]

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "mode": self.mode,
            "retriever": self.retriever,
            "keys": self.keys,
            "units": self.units,
            "k1": self.k1,
            "b": self.b,
            "dense": self.dense.tolist() if self.dense is not None else None,
        }

    @classmethod
    def from_json(cls, data: dict) -> "TextIndex":
        index = build_index(
            kind=data["kind"],
            mode=data["mode"],
            keys=data["keys"],
            units=data["units"],
            retriever=data["retriever"],
            k1=data["k1"],
            b=data["b"],
            dense_rows=data.get("dense"),
        )
        return index


def build_index(
    kind: str,
    mode: str,
    keys: list,
    units: list[str],
    *,
    retriever: str = "bm25",
    backend: Backend | None = None,
    cache: EmbeddingCache | None = None,
    k1: float = BM25_K1,
    b: float = BM25_B,
    dense_rows: list | None = None,
) -> TextIndex:
    tokens = [tokenize(u) for u in units]
    dense = None
    if retriever == "dense":
        if dense_rows is None:
            dense_rows = _embed_units(units, backend, cache)
        dims = {len(r) for r in dense_rows if len(r)}
        dim = dims.pop() if dims else 1
        mat = np.array(
            [r if len(r) else [0.0] * dim for r in dense_rows], dtype=np.float64
        ).reshape(len(units), -1)
        dense = _normalize_rows(mat)
    elif retriever != "bm25":
        raise ValueError(f"unknown retriever {retriever!r}")
    return TextIndex(
        kind=kind,
        mode=mode,
        retriever=retriever,
        keys=list(keys),
        units=list(units),
        tokens=tokens,
        stats=corpus_stats(tokens),
        k1=k1,
        b=b,
        dense=dense,
    )


def _embed_units(
    units: list[str], backend: Backend | None, cache: EmbeddingCache | None
) -> list[list[float]]:
    if backend is None:
        raise ValueError("dense indexing needs a backend")
    nonempty = [u for u in units if u.strip()]
    if nonempty:
        if cache is not None:
            vectors = cache.lookup(nonempty, backend)
        else:
            vectors = [list(v.values) for v in backend.embed(nonempty)]
    else:
        vectors = []
    by_unit = dict(zip(nonempty, vectors))
    # empty units embed as the zero vector: retrievable, score 0
    return [by_unit.get(u, []) if u.strip() else [] for u in units]


def index_pages(
    kb: KnowledgeBase,
    doc: Document,
    mode: str = "knowledge",
    *,
    retriever: str = "bm25",
    backend: Backend | None = None,
    cache: EmbeddingCache | None = None,
    k1: float = BM25_K1,
    b: float = BM25_B,
) -> TextIndex:
    """One indexed unit per page: OCR concatenation or built page knowledge."""
    if kb.doc_id != doc.doc_id:
        raise ValueError(f"knowledge base is for {kb.doc_id!r}, document is {doc.doc_id!r}")
    if mode == "ocr":
        units = [
            " ".join(el.verbatim for el in page.elements if el.verbatim)
            for page in doc.pages
        ]
    elif mode == "knowledge":
        if len(kb.pages) != len(doc.pages):
            raise ValueError(
                f"knowledge covers {len(kb.pages)} pages, document has {len(doc.pages)}"
            )
        units = [kb.page_knowledge(page.index).raw_text for page in doc.pages]
    else:
        raise ValueError(f"unknown index mode {mode!r}")
    keys = [page.index for page in doc.pages]
    return build_index(
        "pages", mode, keys, units, retriever=retriever, backend=backend, cache=cache, k1=k1, b=b
    )


def index_elements(
    kb: KnowledgeBase,
    doc: Document,
    *,
    retriever: str = "bm25",
    backend: Backend | None = None,
    cache: EmbeddingCache | None = None,
    k1: float = BM25_K1,
    b: float = BM25_B,
    pages: set[int] | None = None,
) -> TextIndex:
    """One unit per element: verbatim text plus its knowledge when built.

    ``pages`` restricts the index to elements on those pages (used by
    ground-truth-page evaluation).
    """
    if kb.doc_id != doc.doc_id:
        raise ValueError(f"knowledge base is for {kb.doc_id!r}, document is {doc.doc_id!r}")
    keys: list[str] = []
    units: list[str] = []
    for el in doc.iter_elements():
        if pages is not None and el.page_index not in pages:
            continue
        ek = kb.element_knowledge(el.element_id)
        unit = el.verbatim if ek is None else f"{el.verbatim} {ek.raw_text}".strip()
        keys.append(el.element_id)
        units.append(unit)
    return build_index(
        "elements", "elements", keys, units, retriever=retriever, backend=backend, cache=cache, k1=k1, b=b
    )


def _ranked(index: TextIndex, scores: list[float], k: int) -> list[tuple]:
    order = sorted(zip(index.keys, scores), key=lambda t: (-t[1], t[0]))
    return order[: min(k, len(order))]


def retrieve_pages(
    plan: QueryPlan, index: TextIndex, k: int, backend: Backend | None = None
) -> list[RankedPage]:
    """Top-k pages for the query joined with its subqueries."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(index) == 0:
        raise ValueError("empty index")
    scores = _score(plan, index, backend)
    return [RankedPage(key, score, index.retriever) for key, score in _ranked(index, scores, k)]


def retrieve_elements(
    plan: QueryPlan, index: TextIndex, k: int, backend: Backend | None = None
) -> list[RankedElement]:
    """Top-k elements; ties break by ascending element id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(index) == 0:
        return []
    scores = _score(plan, index, backend)
    return [RankedElement(key, score, index.retriever) for key, score in _ranked(index, scores, k)]


def _score(plan: QueryPlan, index: TextIndex, backend: Backend | None) -> list[float]:
    joint = plan.joint_query()
    if index.retriever == "dense":
        if backend is None:
            raise ValueError("dense retrieval needs a backend to embed the query")
        qvec = np.array(backend.embed([joint])[0].values, dtype=np.float64)
        return index.dense_scores(qvec)
    return index.sparse_scores(tokenize(joint))


def save_index(index: TextIndex, kbdir: str | Path) -> Path:
    """Persist under <kbdir>/index/<kind>.<retriever>.json."""
    out_dir = Path(kbdir) / "index"
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{index.kind}.{'sparse' if index.retriever == 'bm25' else 'dense'}.json"
    path.write_text(json.dumps(index.to_json(), sort_keys=True), encoding="utf-8")
    return path


def load_index(path: str | Path) -> TextIndex:
    return TextIndex.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
