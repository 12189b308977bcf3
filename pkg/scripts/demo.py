"""Offline end-to-end demo: rendered slides -> OCR -> knowledge -> answer.

Renders a tiny three-page deck to PNGs, extracts it with the ocr_adapter
builtin engine (real template-matching OCR, no network), merges fragments,
builds the knowledge base against a scripted backend, and answers one
question. Everything lands in --workdir for inspection.

Needs both packages installed:
    pip install -e . --no-build-isolation
    pip install -e ocr_adapter --no-build-isolation
"""

from __future__ import annotations

import argparse
import tempfile
from pathlib import Path

from PIL import Image, ImageDraw, ImageFont

from deckagent.backend import ScriptedBackend
from deckagent.document import load_document, save_document
from deckagent.knowledge import build_knowledge_base
from deckagent.merge import merge_document
from deckagent.orchestrator import QueryConfig, answer_query, query_hash
from ocr_adapter.extract import extract

QUESTION = "How much budget is allocated?"

OVERVIEW = """\
**Title**
Product Launch Plan

**Objective**
Pitch the launch schedule and budget

**Structure Overview**
- **Slide 1**: title slide naming the launch plan
- **Slide 2**: timeline targeting a third-quarter release
- **Slide 3**: budget figure with supporting artwork

**Key Insights**
- The launch is funded with 450K and targets Q3

**Audience**
Executives

**Tone**
Persuasive
"""

BUILD_SCRIPT = [
    {"match": "Rewrite the overview", "response": OVERVIEW},
    {"match": "compact deck-level overview", "response": OVERVIEW},
    {"match": "slide 1 of 3",
     "response": "Summary: Title slide announcing the product launch plan.\nRelated slides: none"},
    {"match": "slide 2 of 3",
     "response": "Summary: Timeline slide: the release lands in Q3.\nRelated slides: 3"},
    {"match": "slide 3 of 3",
     "response": "Summary: Budget slide allocating 450K to the launch.\nRelated slides: 2"},
    {"match": "Describe the highlighted element",
     "response": ("Element Type: text\nPosition on Slide: centered\n"
                  "Verbatim Content: as shown\nSemantic Role: states a launch fact\n"
                  "Functional Purpose: inform the audience\n"
                  "Relation to Slide: carries the slide message\n"
                  "Inferred Importance: medium")},
]

QUERY_SCRIPT = [
    {"match": "Classify the question", "response": "fact-direct"},
    {"match": "short search phrases", "response": "budget\n450K"},
    {"match": "Slide 3 notes",
     "response": "ANSWER: 450K\nREASONING: the budget slide allocates 450K"},
    {"match": "Element",
     "response": "ANSWER: 450K\nREASONING: the highlighted text box reads BUDGET 450K"},
]


def render_deck(pages_dir: Path) -> None:
    font = ImageFont.truetype("/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf", 44)
    lines = [
        ["PRODUCT LAUNCH PLAN"],
        ["TIMELINE", "RELEASE IN Q3"],
        ["BUDGET 450K"],
    ]
    pages_dir.mkdir(parents=True, exist_ok=True)
    for i, texts in enumerate(lines, 1):
        img = Image.new("RGB", (900, 500), (255, 255, 255))
        draw = ImageDraw.Draw(img)
        for row, text in enumerate(texts):
            draw.text((60, 80 + 120 * row), text, font=font, fill=(0, 0, 0))
        if i == 3:
            draw.rectangle([520, 220, 840, 440], fill=(70, 110, 180))
        img.save(pages_dir / f"slide{i}.png")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default=None, help="defaults to a fresh temp dir")
    args = parser.parse_args()
    work = Path(args.workdir) if args.workdir else Path(tempfile.mkdtemp(prefix="deckagent-demo-"))

    pages = work / "pages"
    render_deck(pages)
    print(f"[1/4] rendered 3 slides into {pages}")

    raw = work / "rawdoc"
    report = extract(pages, raw, engine="builtin", doc_id="launch-deck")
    print(f"[2/4] extracted {report.total_elements} elements "
          f"with {report.engine_name} {report.engine_version}")

    doc = load_document(raw)
    merged, stats = merge_document(doc, tau=15.0)
    docdir = work / "doc"
    save_document(merged, docdir)
    print(f"[3/4] merged {stats['elements_before']} -> {stats['elements_after']} elements")

    kbdir = work / "kb"
    doc = load_document(docdir)
    kb = build_knowledge_base(
        doc, ScriptedBackend.from_records(BUILD_SCRIPT), kbdir, docdir=docdir
    )
    print(f"[4/4] built knowledge base: {len(kb.pages)} pages, {len(kb.elements)} elements")

    final = answer_query(
        doc, kb, QUESTION, ScriptedBackend.from_records(QUERY_SCRIPT),
        kbdir=kbdir, config=QueryConfig(k_pages=1, k_elements=2),
    )
    print()
    print(f"Q: {QUESTION}")
    print(f"A: {final.answer}   [{final.mode}; pages {list(final.pages)}; "
          f"elements {list(final.elements)}]")
    print(f"trace: {kbdir / 'traces' / (query_hash(QUESTION) + '.json')}")


if __name__ == "__main__":
    main()
