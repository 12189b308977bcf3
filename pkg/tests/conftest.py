"""Shared fixtures: synthetic deck builders and scripted-backend helpers."""

from __future__ import annotations

import json
from pathlib import Path

import pytest
from PIL import Image, ImageDraw



def make_raster(path: Path, width: int, height: int, color=(250, 250, 245), boxes=()):
    """Tiny deterministic page image with optional colored rectangles."""
    img = Image.new("RGB", (width, height), color)
    draw = ImageDraw.Draw(img)
    for (x1, y1, x2, y2, rgb) in boxes:
        draw.rectangle([x1, y1, x2 - 1, y2 - 1], fill=rgb, outline=(40, 40, 40))
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")


def write_docdir(docdir: Path, doc_id: str, pages: list[dict], elements: list[dict],
                 width: int = 320, height: int = 240):
    """Write a canonical document directory from plain dicts.

    ``pages`` entries may carry their own width/height/boxes; ``elements``
    are passed through to elements.json.
    """
    docdir.mkdir(parents=True, exist_ok=True)
    manifest_pages = []
    for page in pages:
        idx = page["index"]
        w = page.get("width", width)
        h = page.get("height", height)
        raster = f"page_{idx:04d}.png"
        make_raster(docdir / raster, w, h, boxes=page.get("boxes", ()))
        manifest_pages.append({"index": idx, "raster": raster, "width": w, "height": h})
    (docdir / "manifest.json").write_text(
        json.dumps({"doc_id": doc_id, "pages": manifest_pages}, indent=2), encoding="utf-8"
    )
    (docdir / "elements.json").write_text(json.dumps(elements, indent=2), encoding="utf-8")
    return docdir


def text_el(element_id: str, page: int, bbox, text: str) -> dict:
    return {"element_id": element_id, "page_index": page, "type": "text",
            "bbox": list(bbox), "text": text}


def region_el(element_id: str, page: int, bbox, etype: str) -> dict:
    return {"element_id": element_id, "page_index": page, "type": etype,
            "bbox": list(bbox), "text": ""}


@pytest.fixture
def simple_docdir(tmp_path):
    """1-page doc with two near text boxes and one chart region."""
    return write_docdir(
        tmp_path / "doc-simple",
        "doc-simple",
        pages=[{"index": 1}],
        elements=[
            text_el("t1", 1, (10, 10, 60, 24), "Hello"),
            text_el("t2", 1, (64, 10, 120, 24), "World"),
            region_el("c1", 1, (10, 60, 200, 180), "chart"),
        ],
    )


@pytest.fixture
def fixture_deck(tmp_path):
    """4-page deck with element counts [5, 8, 6, 7] (fixed by construction)."""
    elements = []
    counts = [5, 8, 6, 7]
    for page, count in enumerate(counts, 1):
        for i in range(count - 1):
            y = 10 + 30 * i
            elements.append(text_el(f"p{page}t{i}", page, (10, y, 150, y + 14),
                                    f"page {page} line {i}"))
        elements.append(region_el(f"p{page}img", page, (200, 10, 300, 110), "image"))
    return write_docdir(
        tmp_path / "doc-fix4", "doc-fix4",
        pages=[{"index": i} for i in range(1, 5)],
        elements=elements,
    )


CAUSE_DECK_ID = "deck-cause"


def cause_effect_elements() -> list[dict]:
    """Elements for the 4-page cause/effect deck; page 4 carries the flowchart."""
    els = [
        text_el("p1-title", 1, (20, 20, 300, 44), "Quarterly Review"),
        text_el("p2-title", 2, (20, 20, 300, 44), "Agenda and Summary"),
        text_el("p2-body", 2, (20, 60, 300, 80), "Overview of the divisions and the outlook"),
        text_el("p3-title", 3, (20, 20, 300, 44), "Retail Banking Results"),
        text_el("p4-title", 4, (20, 20, 300, 44), "Wealth Management - The Cause"),
        text_el("p4-item1", 4, (20, 60, 180, 76), "High client churn"),
        text_el("p4-item2", 4, (20, 80, 180, 96), "Rising service costs"),
        region_el("flowchart", 4, (200, 60, 310, 200), "chart"),
    ]
    return els


@pytest.fixture
def cause_deck(tmp_path):
    return write_docdir(
        tmp_path / CAUSE_DECK_ID, CAUSE_DECK_ID,
        pages=[{"index": i} for i in range(1, 5)],
        elements=cause_effect_elements(),
    )


def global_markdown(n_pages: int, title: str = "Quarterly Review") -> str:
    lines = [
        "**Title**", title, "",
        "**Objective**", "Inform leadership about division performance", "",
        "**Structure Overview**",
    ]
    for i in range(1, n_pages + 1):
        lines.append(f"- **Slide {i}**: overview of slide {i}")
    lines += [
        "", "**Key Insights**",
        "- Wealth management problems cause business under-performance",
        "", "**Audience**", "Executives", "",
        "**Tone**", "Analytical",
    ]
    return "\n".join(lines)


def page_reply(index: int, summary: str, links: str = "none") -> str:
    return f"Summary: {summary}\nRelated slides: {links}"


def element_reply(etype: str = "text", importance: str = "high",
                  role: str = "states a fact", verbatim: str = "") -> str:
    return "\n".join([
        f"Element Type: {etype}",
        "Position on Slide: centered",
        f"Verbatim Content: {verbatim or 'n/a'}",
        f"Semantic Role: {role}",
        "Functional Purpose: support the slide message",
        "Relation to Slide: backs the main claim",
        f"Inferred Importance: {importance}",
    ])


def cause_build_script() -> list[dict]:
    """Routed script for building the cause/effect deck knowledge base.

    Route order matters: the refine prompt also carries the global system
    text, so its route comes first.
    """
    records = [
        {"match": "Rewrite the overview", "response": global_markdown(4)},
        {"match": "compact deck-level overview", "response": global_markdown(3)},
        {"match": "slide 1 of 4", "response": page_reply(1, "Title slide for the quarterly review.")},
        {"match": "slide 2 of 4", "response": page_reply(2, "Agenda; cause and effect region discussed later.", "3, 4")},
        {"match": "slide 3 of 4", "response": page_reply(3, "Retail banking results with revenue table.")},
        {"match": "slide 4 of 4", "response": page_reply(
            4, "Wealth Management - The Cause: listed problems lead to business under-performance.")},
        {"match": "id p1-title", "response": element_reply(verbatim="Quarterly Review")},
        {"match": "id p2-title", "response": element_reply(verbatim="Agenda and Summary", importance="medium")},
        {"match": "id p2-body", "response": element_reply(verbatim="Overview of divisions", importance="low")},
        {"match": "id p3-title", "response": element_reply(verbatim="Retail Banking Results")},
        {"match": "id p4-title", "response": element_reply(verbatim="Wealth Management - The Cause")},
        {"match": "id p4-item1", "response": element_reply(verbatim="High client churn", importance="medium")},
        {"match": "id p4-item2", "response": element_reply(verbatim="Rising service costs", importance="medium")},
        {"match": "id flowchart", "response": element_reply(
            etype="chart",
            role="flowchart mapping the listed problems to the outcome node Business Under-Performance",
        )},
    ]
    return records


CAUSE_QUESTION = "What do the listed problems lead to?"
CAUSE_ANSWER = "Business under-performance"


def cause_query_script() -> list[dict]:
    """Routed script for answering the cause/effect question."""
    return [
        {"match": "Classify the question", "response": "uncertain"},
        {"match": "short search phrases", "response": "listed problems\nflowchart\ncause"},
        {"match": "answer synthesizer",
         "response": "ANSWER: Business under-performance\nREASONING: all readers converge on the flowchart outcome"},
        {"match": "Deck overview:",
         "response": "ANSWER: The deck links division problems to weaker results\nREASONING: overview insights"},
        {"match": "Slide 4 notes",
         "response": "ANSWER: They lead to business under-performance\nREASONING: slide 4 notes state the causal chain"},
        {"match": "Element flowchart",
         "response": "ANSWER: Business Under-Performance\nREASONING: the flowchart edge ends at that node"},
    ]
