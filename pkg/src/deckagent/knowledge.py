"""Query-agnostic knowledge construction at deck, page, and element level.

The build is top-down: a deck overview from the opening slides, then one
pass over the pages in order (each page prompt carries the previous page's
notes, so cross-slide references survive), then a rewrite of the overview
once all pages are known, then one description per element with the element
highlighted on its page raster. Every backend call is logged under
``<kbdir>/prompts/`` so the conditioning chain can be audited after the fact.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

from PIL import Image, ImageDraw, ImageFont

from . import prompts
from .backend import Backend, BackendError, ChatMessage, ChatRequest, ImagePart, TextPart
from .document import Document, Element, Page

IMPORTANCE_LEVELS = ("low", "medium", "high")

GLOBAL_SECTIONS = ("Title", "Objective", "Structure Overview", "Key Insights", "Audience", "Tone")

_SECTION_RE = re.compile(
    r"^\s*(?:#+\s*)?\*{0,2}(Title|Objective|Structure Overview|Key Insights|Audience|Tone)\*{0,2}\s*:?\s*(.*)$",
    re.IGNORECASE,
)
_SLIDE_LINE_RE = re.compile(r"slide\s*(\d+)\s*\**\s*[:.\-]\s*(.*)", re.IGNORECASE)
_ELEMENT_FIELD_RE = re.compile(
    r"^\s*\*{0,2}(Element Type|Position on Slide|Verbatim Content|Semantic Role|"
    r"Functional Purpose|Relation to Slide|Inferred Importance)\*{0,2}\s*:\s*(.*)$",
    re.IGNORECASE,
)


class KnowledgeBuildError(Exception):
    """A build step failed; partial results are already on disk."""


@dataclass(frozen=True, slots=True)
class GlobalKnowledge:
    title: str
    objective: str
    structure_overview: dict[int, str]
    key_insights: tuple[str, ...]
    audience: str
    tone: str
    raw_markdown: str
    parse_warning: bool = False
    refined: bool = False

    @classmethod
    def from_markdown(cls, text: str, refined: bool = False) -> "GlobalKnowledge":
        sections: dict[str, list[str]] = {}
        current: str | None = None
        for line in text.splitlines():
            m = _SECTION_RE.match(line)
            if m:
                current = m.group(1).title()
                sections[current] = [m.group(2)] if m.group(2).strip() else []
                continue
            if current is not None:
                sections[current].append(line)

        def body(name: str) -> str:
            return "\n".join(sections.get(name, [])).strip()

        structure: dict[int, str] = {}
        duplicate = False
        for line in sections.get("Structure Overview", []):
            m = _SLIDE_LINE_RE.search(line)
            if m:
                idx = int(m.group(1))
                if idx in structure:
                    duplicate = True
                structure[idx] = m.group(2).strip().strip("*").strip()

        insights = tuple(
            line.lstrip("-* ").strip()
            for line in sections.get("Key Insights", [])
            if line.strip().startswith(("-", "*"))
        )
        warning = duplicate or any(name not in sections for name in GLOBAL_SECTIONS)
        return cls(
            title=body("Title").splitlines()[0].strip() if body("Title") else "",
            objective=body("Objective"),
            structure_overview=structure,
            key_insights=insights,
            audience=body("Audience"),
            tone=body("Tone"),
            raw_markdown=text,
            parse_warning=warning,
            refined=refined,
        )


@dataclass(frozen=True, slots=True)
class PageKnowledge:
    page_index: int
    summary: str
    cross_page_links: tuple[int, ...]
    raw_text: str

    @classmethod
    def from_reply(cls, page_index: int, text: str) -> "PageKnowledge":
        m = re.search(r"^\s*Summary\s*:\s*", text, re.IGNORECASE | re.MULTILINE)
        links: tuple[int, ...] = ()
        if m:
            rest = text[m.end():]
            link_m = re.search(r"^\s*Related slides\s*:\s*(.*)$", rest, re.IGNORECASE | re.MULTILINE)
            if link_m:
                summary = rest[: link_m.start()].strip()
                links = tuple(
                    int(n) for n in re.findall(r"\d+", link_m.group(1))
                )
            else:
                summary = rest.strip()
        else:
            summary = text.strip()
        return cls(page_index=page_index, summary=summary, cross_page_links=links, raw_text=text)

    def to_json(self) -> dict:
        return {
            "page_index": self.page_index,
            "summary": self.summary,
            "cross_page_links": list(self.cross_page_links),
            "raw_text": self.raw_text,
        }

    @classmethod
    def from_json(cls, data: dict) -> "PageKnowledge":
        return cls(
            page_index=int(data["page_index"]),
            summary=data["summary"],
            cross_page_links=tuple(int(i) for i in data["cross_page_links"]),
            raw_text=data["raw_text"],
        )


@dataclass(frozen=True, slots=True)
class ElementKnowledge:
    element_id: str
    semantic_role: str
    functional_purpose: str
    relation_to_slide: str
    inferred_importance: str
    raw_text: str
    parse_warning: bool = False

    @classmethod
    def from_reply(cls, element_id: str, text: str) -> "ElementKnowledge":
        fields: dict[str, str] = {}
        current: str | None = None
        for line in text.splitlines():
            m = _ELEMENT_FIELD_RE.match(line)
            if m:
                current = m.group(1).title()
                fields[current] = m.group(2).strip()
            elif current is not None and line.strip():
                fields[current] += " " + line.strip()

        raw_importance = fields.get("Inferred Importance", "").lower()
        importance = next((lvl for lvl in IMPORTANCE_LEVELS if lvl in raw_importance), "")
        required = ("Semantic Role", "Functional Purpose", "Relation To Slide")
        warning = any(name not in fields for name in required) or not importance
        return cls(
            element_id=element_id,
            semantic_role=fields.get("Semantic Role", ""),
            functional_purpose=fields.get("Functional Purpose", ""),
            relation_to_slide=fields.get("Relation To Slide", ""),
            inferred_importance=importance or "medium",
            raw_text=text,
            parse_warning=warning,
        )

    def to_json(self) -> dict:
        return {
            "element_id": self.element_id,
            "semantic_role": self.semantic_role,
            "functional_purpose": self.functional_purpose,
            "relation_to_slide": self.relation_to_slide,
            "inferred_importance": self.inferred_importance,
            "raw_text": self.raw_text,
            "parse_warning": self.parse_warning,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ElementKnowledge":
        return cls(
            element_id=data["element_id"],
            semantic_role=data["semantic_role"],
            functional_purpose=data["functional_purpose"],
            relation_to_slide=data["relation_to_slide"],
            inferred_importance=data["inferred_importance"],
            raw_text=data["raw_text"],
            parse_warning=bool(data.get("parse_warning", False)),
        )


@dataclass
class KnowledgeBase:
    doc_id: str
    overview: GlobalKnowledge
    pages: list[PageKnowledge]
    elements: list[ElementKnowledge]
    build_metadata: dict = field(default_factory=dict)

    def page_knowledge(self, index: int) -> PageKnowledge:
        for pk in self.pages:
            if pk.page_index == index:
                return pk
        raise KeyError(f"no page knowledge for page {index}")

    def element_knowledge(self, element_id: str) -> ElementKnowledge | None:
        for ek in self.elements:
            if ek.element_id == element_id:
                return ek
        return None


def _json_bytes(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _safe_name(label: str) -> str:
    safe = re.sub(r"[^A-Za-z0-9._-]+", "_", label)
    if safe != label:
        # disambiguate labels that collide after sanitizing
        safe = f"{safe}-{hashlib.sha256(label.encode('utf-8')).hexdigest()[:8]}"
    return safe


class PromptLogger:
    """Persists every backend request/response pair as one JSON file."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self.labels: list[str] = []

    def log(self, label: str, req: ChatRequest, response: str | None, error: str | None = None) -> str:
        messages = []
        for msg in req.messages:
            parts = []
            for part in msg.parts:
                if isinstance(part, TextPart):
                    parts.append({"text": part.text})
                else:
                    parts.append(
                        {
                            "image_sha256": part.sha256,
                            "media_type": part.media_type,
                            "size": len(part.data),
                        }
                    )
            messages.append({"role": msg.role, "parts": parts})
        payload = {
            "label": label,
            "model": req.model_name,
            "temperature": req.temperature,
            "max_output_tokens": req.max_output_tokens,
            "messages": messages,
            "response": response,
            "error": error,
        }
        path = self.directory / f"{_safe_name(label)}.json"
        path.write_text(_json_bytes(payload), encoding="utf-8")
        with self._lock:
            self.labels.append(label)
        return label

    def read(self, label: str) -> dict:
        path = self.directory / f"{_safe_name(label)}.json"
        return json.loads(path.read_text(encoding="utf-8"))


def call_logged(backend: Backend, req: ChatRequest, logger: PromptLogger | None, label: str) -> str:
    """Run one completion, logging the prompt whether it succeeds or fails."""
    try:
        result = backend.complete(req)
    except BackendError as exc:
        if logger is not None:
            logger.log(label, req, None, error=str(exc))
        raise
    if logger is not None:
        logger.log(label, req, result.text)
    return result.text


def _raster_part(page: Page) -> ImagePart:
    return ImagePart(page.raster_path.read_bytes())


def sampled_pages(doc: Document) -> list[Page]:
    """The opening pages used for deck-level context: first three (or fewer)."""
    return list(doc.pages[: min(3, len(doc.pages))])


def annotate_page(page: Page, highlight: list[Element]) -> bytes:
    """Copy of the page raster with each highlighted element outlined and labeled.

    An empty highlight list returns the raster bytes unchanged.
    """
    raw = page.raster_path.read_bytes()
    if not highlight:
        return raw
    for el in highlight:
        if el.page_index != page.index:
            raise ValueError(f"element {el.element_id!r} belongs to page {el.page_index}, not {page.index}")
        b = el.bbox
        if b.x1 < 0 or b.y1 < 0 or b.x2 > page.width or b.y2 > page.height:
            raise ValueError(f"element {el.element_id!r} box {b.as_tuple()} is off-page")

    img = Image.open(io.BytesIO(raw)).convert("RGB")
    draw = ImageDraw.Draw(img)
    font = ImageFont.load_default()
    for el in highlight:
        x1, y1, x2, y2 = el.bbox.as_tuple()
        draw.rectangle([x1, y1, x2 - 1, y2 - 1], outline=(255, 0, 0), width=3)
        label = el.element_id
        tw = int(draw.textlength(label, font=font))
        th = 12
        ly = y1 - th - 4 if y1 - th - 4 >= 0 else y1 + 2
        lx = min(x1, max(0, page.width - tw - 6))
        draw.rectangle([lx, ly, lx + tw + 5, ly + th + 2], fill=(255, 0, 0))
        draw.text((lx + 3, ly + 1), label, fill=(255, 255, 255), font=font)
    out = io.BytesIO()
    img.save(out, format="PNG")
    return out.getvalue()


def build_global(doc: Document, backend: Backend, logger: PromptLogger | None = None) -> GlobalKnowledge:
    """Deck overview from the first min(3, |pages|) page rasters."""
    images = [_raster_part(p) for p in sampled_pages(doc)]
    req = ChatRequest(
        messages=(
            ChatMessage.system(prompts.GLOBAL_SYSTEM),
            ChatMessage.user(prompts.GLOBAL_INSTRUCTIONS, images=images),
        )
    )
    text = call_logged(backend, req, logger, "global")
    return GlobalKnowledge.from_markdown(text)


def _page_prompt(doc: Document, page: Page, kg: GlobalKnowledge, prev: PageKnowledge | None) -> ChatRequest:
    chunks = [f"Deck overview:\n{kg.raw_markdown}\n"]
    if prev is not None:
        chunks.append(f"Notes from the previous slide:\n{prev.raw_text}\n")
    chunks.append(prompts.PAGE_INSTRUCTIONS.format(index=page.index, total=len(doc.pages)))
    return ChatRequest(
        messages=(
            ChatMessage.system(prompts.PAGE_SYSTEM),
            ChatMessage.user("\n".join(chunks), images=[_raster_part(page)]),
        )
    )


def build_pages(
    doc: Document,
    kg: GlobalKnowledge,
    backend: Backend,
    *,
    kbdir: str | Path | None = None,
    resume: bool = False,
    logger: PromptLogger | None = None,
) -> list[PageKnowledge]:
    """Sequential page pass; page i sees the page i-1 notes.

    With ``kbdir`` set, each page is persisted as soon as it is built, and a
    failure aborts the pass leaving pages 1..i-1 on disk; ``resume`` reuses
    those files instead of re-asking the backend.
    """
    pages_dir = Path(kbdir) / "pages" if kbdir is not None else None
    if pages_dir is not None:
        pages_dir.mkdir(parents=True, exist_ok=True)

    out: list[PageKnowledge] = []
    prev: PageKnowledge | None = None
    for page in doc.pages:
        page_file = pages_dir / f"{page.index:04d}.json" if pages_dir is not None else None
        if resume and page_file is not None and page_file.is_file():
            pk = PageKnowledge.from_json(json.loads(page_file.read_text(encoding="utf-8")))
        else:
            req = _page_prompt(doc, page, kg, prev)
            try:
                text = call_logged(backend, req, logger, f"page_{page.index:04d}")
            except BackendError as exc:
                raise KnowledgeBuildError(
                    f"page {page.index} failed after {len(out)} pages were built: {exc}"
                ) from exc
            pk = PageKnowledge.from_reply(page.index, text)
            if page_file is not None:
                page_file.write_text(_json_bytes(pk.to_json()), encoding="utf-8")
        out.append(pk)
        prev = pk
    return out


def refine_global(
    kg: GlobalKnowledge,
    pages: list[PageKnowledge],
    backend: Backend,
    logger: PromptLogger | None = None,
) -> GlobalKnowledge:
    """One text-only rewrite of the overview given every page's notes."""
    chunks = [prompts.REFINE_INSTRUCTIONS, "Draft overview:\n" + kg.raw_markdown, ""]
    for pk in pages:
        chunks.append(f"Slide {pk.page_index} notes:\n{pk.raw_text}\n")
    req = ChatRequest(
        messages=(
            ChatMessage.system(prompts.GLOBAL_SYSTEM),
            ChatMessage.user("\n".join(chunks)),
        )
    )
    try:
        text = call_logged(backend, req, logger, "refine_global")
    except BackendError:
        return replace(kg, refined=False)
    return GlobalKnowledge.from_markdown(text, refined=True)


def _element_prompt(
    doc: Document, el: Element, kg: GlobalKnowledge, page_knowledge: PageKnowledge
) -> ChatRequest:
    page = doc.page(el.page_index)
    annotated = ImagePart(annotate_page(page, [el]))
    text = "\n".join(
        [
            f"Deck overview:\n{kg.raw_markdown}\n",
            f"Slide {el.page_index} notes:\n{page_knowledge.raw_text}\n",
            prompts.ELEMENT_INSTRUCTIONS.format(
                element_id=el.element_id,
                page_index=el.page_index,
                etype=el.etype.to_json(),
                bbox=el.bbox.as_tuple(),
                verbatim=el.verbatim,
            ),
        ]
    )
    return ChatRequest(
        messages=(
            ChatMessage.system(prompts.ELEMENT_SYSTEM),
            ChatMessage.user(text, images=[annotated]),
        )
    )


def build_elements(
    doc: Document,
    kg: GlobalKnowledge,
    pages: list[PageKnowledge],
    backend: Backend,
    *,
    kbdir: str | Path | None = None,
    resume: bool = False,
    logger: PromptLogger | None = None,
    max_workers: int = 4,
) -> tuple[list[ElementKnowledge], dict[str, str]]:
    """One call per element, annotated raster attached; failures are collected.

    Calls run concurrently (no cross-element dependency); results come back
    in document order regardless of completion order. With ``kbdir`` set each
    element is persisted as it completes, and ``resume`` reuses those files
    so a retry only asks the backend about previously failed elements.
    """
    elements_dir = Path(kbdir) / "elements" if kbdir is not None else None
    if elements_dir is not None:
        elements_dir.mkdir(parents=True, exist_ok=True)

    by_index = {pk.page_index: pk for pk in pages}
    elements = list(doc.iter_elements())
    results: list[ElementKnowledge | None] = [None] * len(elements)
    failures: dict[str, str] = {}

    def run(pos: int, el: Element):
        path = elements_dir / f"{_safe_name(el.element_id)}.json" if elements_dir is not None else None
        if resume and path is not None and path.is_file():
            results[pos] = ElementKnowledge.from_json(json.loads(path.read_text(encoding="utf-8")))
            return
        req = _element_prompt(doc, el, kg, by_index[el.page_index])
        text = call_logged(backend, req, logger, f"element_{el.element_id}")
        ek = ElementKnowledge.from_reply(el.element_id, text)
        if path is not None:
            path.write_text(_json_bytes(ek.to_json()), encoding="utf-8")
        results[pos] = ek

    if not elements:
        return [], {}
    workers = min(max_workers, len(elements))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(run, pos, el): el for pos, el in enumerate(elements)}
        for fut, el in futures.items():
            try:
                fut.result()
            except BackendError as exc:
                failures[el.element_id] = str(exc)
    return [r for r in results if r is not None], failures


def _built_at() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    ts = int(epoch) if epoch else int(time.time())
    return datetime.fromtimestamp(ts, tz=timezone.utc).isoformat()


def build_knowledge_base(
    doc: Document,
    backend: Backend,
    kbdir: str | Path,
    *,
    docdir: str | Path | None = None,
    resume: bool = False,
    max_workers: int = 4,
) -> KnowledgeBase:
    """Full construction pass, persisted under kbdir as it goes."""
    kbdir = Path(kbdir)
    for sub in ("pages", "elements", "prompts"):
        (kbdir / sub).mkdir(parents=True, exist_ok=True)
    logger = PromptLogger(kbdir / "prompts")
    global_path = kbdir / "global.md"
    meta_path = kbdir / "meta.json"
    old_meta = json.loads(meta_path.read_text(encoding="utf-8")) if resume and meta_path.is_file() else {}

    if resume and global_path.is_file():
        kg = GlobalKnowledge.from_markdown(
            global_path.read_text(encoding="utf-8"),
            refined=bool(old_meta.get("global_refined", False)),
        )
    else:
        kg = build_global(doc, backend, logger=logger)
        global_path.write_text(kg.raw_markdown, encoding="utf-8")

    pages = build_pages(doc, kg, backend, kbdir=kbdir, resume=resume, logger=logger)

    if not kg.refined:
        kg = refine_global(kg, pages, backend, logger=logger)
        if kg.refined:
            global_path.write_text(kg.raw_markdown, encoding="utf-8")

    elements, failures = build_elements(
        doc, kg, pages, backend,
        kbdir=kbdir, resume=resume, logger=logger, max_workers=max_workers,
    )

    meta = {
        "doc_id": doc.doc_id,
        "docdir": str(Path(docdir).resolve()) if docdir is not None else None,
        "backend": backend.name,
        "chat_model": getattr(backend, "chat_model", ""),
        "built_at": _built_at(),
        "prompt_version": prompts.PROMPT_VERSION,
        "global_refined": kg.refined,
        "global_parse_warning": kg.parse_warning,
        "failed_elements": failures,
    }
    meta_path.write_text(_json_bytes(meta), encoding="utf-8")
    return KnowledgeBase(doc.doc_id, kg, pages, elements, build_metadata=meta)


def load_kb(kbdir: str | Path) -> KnowledgeBase:
    """Read a persisted knowledge base back into memory."""
    kbdir = Path(kbdir)
    meta_path = kbdir / "meta.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"not a knowledge base directory (no meta.json): {kbdir}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    kg = GlobalKnowledge.from_markdown(
        (kbdir / "global.md").read_text(encoding="utf-8"),
        refined=bool(meta.get("global_refined", False)),
    )
    pages = [
        PageKnowledge.from_json(json.loads(p.read_text(encoding="utf-8")))
        for p in sorted((kbdir / "pages").glob("*.json"))
    ]
    elements = [
        ElementKnowledge.from_json(json.loads(p.read_text(encoding="utf-8")))
        for p in sorted((kbdir / "elements").glob("*.json"))
    ]
    expected = set(range(1, len(pages) + 1))
    got = {pk.page_index for pk in pages}
    if got != expected:
        raise KnowledgeBuildError(f"page knowledge does not cover 1..{len(pages)}: {sorted(got)}")
    return KnowledgeBase(meta["doc_id"], kg, pages, elements, build_metadata=meta)
