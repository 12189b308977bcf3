"""Builtin engine: recognition, segmentation, and region detection."""

from __future__ import annotations

import pytest
from PIL import Image

from conftest import render_page
from ocr_adapter.builtin_ocr import BuiltinEngine, build_atlas


@pytest.fixture(scope="module")
def engine():
    return BuiltinEngine()


def test_atlas_covers_charset():
    atlas = build_atlas()
    chars = {t.char for t in atlas}
    assert set("ABCXYZabcxyz0189").issubset(chars)
    # uppercase templates sit at cap height, lowercase x-height below it
    by_char = {t.char: t for t in atlas}
    assert by_char["H"].rel_height == pytest.approx(1.0, abs=0.02)
    assert by_char["o"].rel_height < by_char["O"].rel_height
    assert by_char["."].rel_height < 0.25


def test_reads_single_word(engine):
    words, _ = engine.detect(render_page([(50, 100, "HELLO")]))
    assert [w.text for w in words] == ["HELLO"]
    assert words[0].confidence > 0.5


def test_reads_multiple_words_in_order(engine):
    words, _ = engine.detect(render_page([(50, 100, "GREEN ENERGY REPORT")]))
    assert [w.text for w in words] == ["GREEN", "ENERGY", "REPORT"]


def test_reads_multiple_lines_top_to_bottom(engine):
    img = render_page([(50, 80, "FIRST"), (50, 200, "SECOND")])
    words, _ = engine.detect(img)
    assert [w.text for w in words] == ["FIRST", "SECOND"]
    assert words[0].bbox[1] < words[1].bbox[1]


def test_reads_mixed_case_and_digits(engine):
    words, _ = engine.detect(render_page([(50, 100, "Result 2345")]))
    assert [w.text for w in words] == ["Result", "2345"]


def test_descender_glyph_does_not_break_case(engine):
    # Q's tail must not inflate the line cap height and flip S -> s, N -> n
    words, _ = engine.detect(render_page([(50, 100, "RELEASE IN Q3")]))
    assert [w.text for w in words] == ["RELEASE", "IN", "Q3"]


def test_blank_page(engine):
    words, regions = engine.detect(Image.new("RGB", (400, 300), (255, 255, 255)))
    assert words == []
    assert regions == []


def test_dark_page_yields_nothing(engine):
    words, regions = engine.detect(Image.new("RGB", (400, 300), (10, 10, 10)))
    assert words == []
    assert regions == []


def test_figure_region_detected(engine):
    img = render_page(
        [(50, 60, "CAPTION")],
        figures=[(400, 100, 700, 340, (60, 90, 180))],
    )
    words, regions = engine.detect(img)
    assert [w.text for w in words] == ["CAPTION"]
    assert len(regions) == 1
    region = regions[0]
    assert region.label == "figure"
    x1, y1, x2, y2 = region.bbox
    assert abs(x1 - 400) <= 2 and abs(y1 - 100) <= 2
    assert abs(x2 - 701) <= 2 and abs(y2 - 341) <= 2


def test_word_boxes_tight(engine):
    words, _ = engine.detect(render_page([(50, 100, "HELLO")]))
    x1, y1, x2, y2 = words[0].bbox
    # rendered at x=50, y=100 with 48px font: box must sit in that vicinity
    assert 40 <= x1 <= 70
    assert 100 <= y1 <= 125
    assert x2 - x1 > 80
    assert 25 <= y2 - y1 <= 60
