"""Inference control: run the activated agents, check agreement, synthesize.

The query's category decides which agent levels run. Each agent answers with
an explicit ANSWER/REASONING split. When several agents ran, their answers
are compared pairwise with normalized Levenshtein similarity; agreement (all
pairs >= 0.75) short-circuits to the most fine-grained agent's answer, and
disagreement goes to a synthesizer call that sees every answer plus the
retrieved page images. Every run leaves a full trace on disk.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import prompts
from ._kernels import levenshtein
from .backend import Backend, BackendError, ChatMessage, ChatRequest, ImagePart
from .document import Document
from .knowledge import KnowledgeBase, PromptLogger, annotate_page, call_logged, sampled_pages
from .retrieval import (
    EmbeddingCache,
    QueryCase,
    QueryPlan,
    RankedElement,
    RankedPage,
    TextIndex,
    classify_query,
    generate_subqueries,
    index_elements,
    index_pages,
    retrieve_elements,
    retrieve_pages,
    save_index,
)

AGREEMENT_THRESHOLD = 0.75

# finest first: when agents agree, the most fine-grained answer is returned
LEVEL_ORDER = ("element", "page", "global")


class OrchestratorError(Exception):
    def __init__(self, message: str, trace_path: Path | None = None):
        super().__init__(message)
        self.trace_path = trace_path


def normalize_answer(s: str) -> str:
    return " ".join(s.lower().split())


def nls(a1: str, a2: str) -> float:
    """Normalized Levenshtein similarity in [0, 1] after tokenization.

    Both strings are lowercased and whitespace-collapsed, then compared at
    character level; two empty strings count as identical.
    """
    t1 = normalize_answer(a1)
    t2 = normalize_answer(a2)
    longest = max(len(t1), len(t2))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(t1, t2) / longest


@dataclass(frozen=True, slots=True)
class AgentAnswer:
    level: str
    answer: str
    reasoning: str
    provenance: tuple = ()
    ok: bool = True
    flags: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "level": self.level,
            "answer": self.answer,
            "reasoning": self.reasoning,
            "provenance": list(self.provenance),
            "ok": self.ok,
            "flags": list(self.flags),
        }


@dataclass(slots=True)
class FinalAnswer:
    answer: str
    mode: str  # direct-single-agent | direct-agreement | synthesized | direct-degraded
    contributing: list[AgentAnswer]
    pages: tuple[int, ...] = ()
    elements: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "answer": self.answer,
            "mode": self.mode,
            "contributing": [a.to_json() for a in self.contributing],
            "provenance": {"pages": list(self.pages), "elements": list(self.elements)},
        }


def answers_agree(answers: list[AgentAnswer]) -> bool:
    """True iff every pair of answers has similarity >= 0.75 (inclusive)."""
    if len(answers) < 2:
        raise ValueError("agreement needs at least two answers")
    for i in range(len(answers)):
        for j in range(i + 1, len(answers)):
            if nls(answers[i].answer, answers[j].answer) < AGREEMENT_THRESHOLD:
                return False
    return True


def parse_agent_reply(text: str) -> tuple[str, str, tuple[str, ...]]:
    """Split a reply into (answer, reasoning, flags) via the delimiter protocol."""
    a_pos = text.find(prompts.ANSWER_DELIM)
    r_pos = text.find(prompts.REASONING_DELIM)
    if a_pos < 0:
        return text.strip(), "", ("undelimited",)
    start = a_pos + len(prompts.ANSWER_DELIM)
    if r_pos > a_pos:
        answer = text[start:r_pos].strip()
        reasoning = text[r_pos + len(prompts.REASONING_DELIM):].strip()
        return answer, reasoning, ()
    return text[start:].strip(), "", ("no-reasoning",)


def _failed(level: str, exc: Exception) -> AgentAnswer:
    return AgentAnswer(level=level, answer="", reasoning=str(exc), ok=False, flags=("backend-failure",))


def _sentinel(level: str, provenance: tuple = ()) -> AgentAnswer:
    return AgentAnswer(
        level=level,
        answer=prompts.INSUFFICIENT_CONTEXT,
        reasoning="retrieval returned nothing",
        provenance=provenance,
        flags=("no-context",),
    )


def answer_global(
    kb: KnowledgeBase,
    doc: Document,
    q: str,
    backend: Backend,
    logger: PromptLogger | None = None,
    label: str = "agent_global",
) -> AgentAnswer:
    """Deck-level agent: overview plus the opening page rasters."""
    pages = sampled_pages(doc)
    images = [ImagePart(p.raster_path.read_bytes()) for p in pages]
    text = "\n".join(
        [
            f"Deck overview:\n{kb.overview.raw_markdown}\n",
            f"Question: {q}",
            prompts.AGENT_FORMAT,
        ]
    )
    req = ChatRequest(
        messages=(
            ChatMessage.system(prompts.GLOBAL_AGENT_SYSTEM),
            ChatMessage.user(text, images=images),
        )
    )
    try:
        reply = call_logged(backend, req, logger, label)
    except BackendError as exc:
        return _failed("global", exc)
    answer, reasoning, flags = parse_agent_reply(reply)
    return AgentAnswer("global", answer, reasoning, provenance=(), flags=flags)


def answer_page(
    kb: KnowledgeBase,
    doc: Document,
    plan: QueryPlan,
    h_g: AgentAnswer | None,
    retrieved: list[RankedPage],
    backend: Backend,
    logger: PromptLogger | None = None,
    label: str = "agent_page",
) -> AgentAnswer:
    """Page-level agent over the retrieved pages and their knowledge."""
    if not retrieved:
        return _sentinel("page")
    chunks = []
    images = []
    for rp in retrieved:
        page = doc.page(rp.page_index)
        images.append(ImagePart(page.raster_path.read_bytes()))
        pk = kb.page_knowledge(rp.page_index)
        chunks.append(f"Slide {rp.page_index} notes:\n{pk.raw_text}\n")
    if h_g is not None and h_g.ok:
        chunks.append(f"Deck-level reading of the question:\n{h_g.answer}\n{h_g.reasoning}\n")
    chunks.append(f"Question: {plan.query}")
    chunks.append(prompts.AGENT_FORMAT)
    req = ChatRequest(
        messages=(
            ChatMessage.system(prompts.PAGE_AGENT_SYSTEM),
            ChatMessage.user("\n".join(chunks), images=images),
        )
    )
    provenance = tuple(rp.page_index for rp in retrieved)
    try:
        reply = call_logged(backend, req, logger, label)
    except BackendError as exc:
        return _failed("page", exc)
    answer, reasoning, flags = parse_agent_reply(reply)
    return AgentAnswer("page", answer, reasoning, provenance=provenance, flags=flags)


def answer_element(
    kb: KnowledgeBase,
    doc: Document,
    plan: QueryPlan,
    retrieved: list[RankedElement],
    backend: Backend,
    logger: PromptLogger | None = None,
    label: str = "agent_element",
) -> AgentAnswer:
    """Element-level agent: annotated rasters plus verbatim text and knowledge."""
    if not retrieved:
        return _sentinel("element")
    by_page: dict[int, list] = {}
    for re_ in retrieved:
        el = doc.element(re_.element_id)
        by_page.setdefault(el.page_index, []).append(el)

    chunks = []
    images = []
    for page_index in sorted(by_page):
        page = doc.page(page_index)
        els = by_page[page_index]
        images.append(ImagePart(annotate_page(page, els)))
        for el in els:
            ek = kb.element_knowledge(el.element_id)
            chunks.append(
                f"Element {el.element_id} (slide {page_index}, {el.etype.to_json()}, box {el.bbox.as_tuple()}):"
            )
            if el.verbatim:
                chunks.append(f"  text: {el.verbatim}")
            if ek is not None:
                chunks.append(f"  notes: {ek.raw_text}")
            chunks.append("")
    chunks.append(f"Question: {plan.query}")
    chunks.append(prompts.AGENT_FORMAT)
    req = ChatRequest(
        messages=(
            ChatMessage.system(prompts.ELEMENT_AGENT_SYSTEM),
            ChatMessage.user("\n".join(chunks), images=images),
        )
    )
    provenance = tuple(re_.element_id for re_ in retrieved)
    try:
        reply = call_logged(backend, req, logger, label)
    except BackendError as exc:
        return _failed("element", exc)
    answer, reasoning, flags = parse_agent_reply(reply)
    return AgentAnswer("element", answer, reasoning, provenance=provenance, flags=flags)


def _finest(answers: list[AgentAnswer]) -> AgentAnswer:
    by_level = {a.level: a for a in answers}
    for level in LEVEL_ORDER:
        if level in by_level:
            return by_level[level]
    raise ValueError("no answers")


def _merge_provenance(answers: list[AgentAnswer]) -> tuple[tuple[int, ...], tuple[str, ...]]:
    pages: list[int] = []
    elements: list[str] = []
    for a in answers:
        for item in a.provenance:
            if isinstance(item, int) and item not in pages:
                pages.append(item)
            elif isinstance(item, str) and item not in elements:
                elements.append(item)
    return tuple(sorted(pages)), tuple(sorted(elements))


def synthesize(
    answers: list[AgentAnswer],
    page_rasters: list[ImagePart],
    q: str,
    backend: Backend,
    logger: PromptLogger | None = None,
    label: str = "synthesize",
) -> FinalAnswer:
    """Fuse disagreeing agent answers into one, backed by the retrieved pages."""
    if len(answers) < 2:
        raise ValueError("synthesis needs at least two answers")
    chunks = [f"Question: {q}", ""]
    for a in answers:
        chunks.append(f"{a.level} reader answered: {a.answer}")
        if a.reasoning:
            chunks.append(f"  reasoning: {a.reasoning}")
        chunks.append("")
    chunks.append(prompts.SYNTH_FORMAT)
    req = ChatRequest(
        messages=(
            ChatMessage.system(prompts.SYNTH_SYSTEM),
            ChatMessage.user("\n".join(chunks), images=page_rasters),
        )
    )
    pages, elements = _merge_provenance(answers)
    try:
        reply = call_logged(backend, req, logger, label)
    except BackendError:
        fallback = _finest(answers)
        return FinalAnswer(
            answer=fallback.answer,
            mode="direct-degraded",
            contributing=answers,
            pages=pages,
            elements=elements,
        )
    answer, _reasoning, _flags = parse_agent_reply(reply)
    return FinalAnswer(
        answer=answer, mode="synthesized", contributing=answers, pages=pages, elements=elements
    )


def query_hash(q: str) -> str:
    return hashlib.sha256(q.encode("utf-8")).hexdigest()[:16]


@dataclass
class QueryConfig:
    k_pages: int = 3
    k_elements: int = 5
    retriever: str = "bm25"
    index_mode: str = "knowledge"
    subquery_cap: int = 5
    parallel_agents: bool = True


def answer_query(
    doc: Document,
    kb: KnowledgeBase,
    q: str,
    backend: Backend,
    *,
    kbdir: str | Path | None = None,
    config: QueryConfig | None = None,
    gt_pages: list[int] | None = None,
    page_index: TextIndex | None = None,
    element_index: TextIndex | None = None,
) -> FinalAnswer:
    """Classify, retrieve, run the activated agents, and resolve the answer.

    ``gt_pages`` bypasses page retrieval with the given page indices. The full
    trace (plan, rankings, prompt labels, per-agent and final answers) is
    written under <kbdir>/traces/.
    """
    cfg = config or QueryConfig()
    if not q.strip():
        raise ValueError("query must be non-empty")
    if gt_pages is not None:
        known = {p.index for p in doc.pages}
        bad = sorted(set(gt_pages) - known)
        if bad:
            raise ValueError(f"gt_pages not in document: {bad}")
    qh = query_hash(q)
    logger = PromptLogger(Path(kbdir) / "prompts") if kbdir is not None else None

    case = classify_query(q, backend, logger=logger, label=f"query_{qh}_classify")
    subqueries = generate_subqueries(
        q, backend, cap=cfg.subquery_cap, logger=logger, label=f"query_{qh}_subqueries"
    )
    plan = QueryPlan(query=q, case=case, subqueries=tuple(subqueries))
    agents = plan.case.agents

    ranked_pages: list[RankedPage] = []
    ranked_elements: list[RankedElement] = []
    if gt_pages is not None:
        # ground-truth-page mode: page retrieval bypassed, element search
        # restricted to the given pages
        ranked_pages = [RankedPage(i, 1.0, "ground-truth") for i in sorted(gt_pages)]
        if "element" in agents:
            element_index = index_elements(
                kb, doc, retriever=cfg.retriever, backend=backend, pages=set(gt_pages)
            )
            ranked_elements = retrieve_elements(plan, element_index, cfg.k_elements, backend=backend)
    else:
        cache = (
            EmbeddingCache(Path(kbdir) / "index" / "embcache.json")
            if kbdir is not None and cfg.retriever == "dense"
            else None
        )
        if "page" in agents:
            if page_index is None:
                page_index = index_pages(
                    kb, doc, mode=cfg.index_mode, retriever=cfg.retriever,
                    backend=backend, cache=cache,
                )
                if kbdir is not None:
                    save_index(page_index, kbdir)
            ranked_pages = retrieve_pages(plan, page_index, cfg.k_pages, backend=backend)
        if "element" in agents:
            if element_index is None:
                element_index = index_elements(
                    kb, doc, retriever=cfg.retriever, backend=backend, cache=cache
                )
                if kbdir is not None:
                    save_index(element_index, kbdir)
            ranked_elements = retrieve_elements(plan, element_index, cfg.k_elements, backend=backend)

    results: dict[str, AgentAnswer] = {}

    def run_global():
        results["global"] = answer_global(kb, doc, q, backend, logger, label=f"query_{qh}_global")

    def run_element():
        results["element"] = answer_element(
            kb, doc, plan, ranked_elements, backend, logger, label=f"query_{qh}_element"
        )

    independent = [run_global] if "global" in agents else []
    if "element" in agents:
        independent.append(run_element)
    if cfg.parallel_agents and len(independent) > 1:
        with ThreadPoolExecutor(max_workers=len(independent)) as pool:
            list(pool.map(lambda f: f(), independent))
    else:
        for f in independent:
            f()
    if "page" in agents:
        results["page"] = answer_page(
            kb, doc, plan, results.get("global"), ranked_pages, backend, logger,
            label=f"query_{qh}_page",
        )

    ordered = [results[level] for level in ("global", "page", "element") if level in results]
    successful = [a for a in ordered if a.ok]
    pages_prov, elements_prov = _merge_provenance(successful)

    final: FinalAnswer | None = None
    if not successful:
        final = None
    elif len(successful) == 1:
        only = successful[0]
        final = FinalAnswer(
            answer=only.answer,
            mode="direct-single-agent",
            contributing=[only],
            pages=pages_prov,
            elements=elements_prov,
        )
    elif answers_agree(successful):
        final = FinalAnswer(
            answer=_finest(successful).answer,
            mode="direct-agreement",
            contributing=successful,
            pages=pages_prov,
            elements=elements_prov,
        )
    else:
        rasters = [
            ImagePart(doc.page(rp.page_index).raster_path.read_bytes()) for rp in ranked_pages
        ]
        final = synthesize(
            successful, rasters, q, backend, logger, label=f"query_{qh}_synthesize"
        )

    trace = {
        "query": q,
        "query_hash": qh,
        "plan": {
            "case": plan.case.value,
            "agents": sorted(agents),
            "subqueries": list(plan.subqueries),
        },
        "retrieval": {
            "bypassed": gt_pages is not None,
            "gt_pages": sorted(gt_pages) if gt_pages is not None else None,
            "pages": [{"page_index": r.page_index, "score": r.score, "source": r.source} for r in ranked_pages],
            "elements": [{"element_id": r.element_id, "score": r.score, "source": r.source} for r in ranked_elements],
        },
        "prompts": sorted(logger.labels) if logger is not None else [],
        "agents": [a.to_json() for a in ordered],
        "final": final.to_json() if final is not None else None,
    }
    trace_path: Path | None = None
    if kbdir is not None:
        traces_dir = Path(kbdir) / "traces"
        traces_dir.mkdir(parents=True, exist_ok=True)
        trace_path = traces_dir / f"{qh}.json"
        trace_path.write_text(
            json.dumps(trace, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )

    if final is None:
        raise OrchestratorError(
            f"all activated agents failed for query {q!r}"
            + (f" (trace: {trace_path})" if trace_path else ""),
            trace_path=trace_path,
        )
    return final
