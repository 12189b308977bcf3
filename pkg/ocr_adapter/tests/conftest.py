"""Synthetic page renderers shared by the adapter tests."""

from __future__ import annotations

from pathlib import Path

import pytest
from PIL import Image, ImageDraw, ImageFont

FONT_PATH = "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf"


def render_page(texts, size=(800, 400), figures=(), font_size=48) -> Image.Image:
    """White page with black text lines at given positions, plus solid figures."""
    try:
        font = ImageFont.truetype(FONT_PATH, font_size)
    except OSError:
        font = ImageFont.load_default(size=font_size)
    img = Image.new("RGB", size, (255, 255, 255))
    draw = ImageDraw.Draw(img)
    for (x, y, text) in texts:
        draw.text((x, y), text, font=font, fill=(0, 0, 0))
    for (x1, y1, x2, y2, color) in figures:
        draw.rectangle([x1, y1, x2, y2], fill=color)
    return img


@pytest.fixture
def hello_page_dir(tmp_path) -> Path:
    pages = tmp_path / "pages"
    pages.mkdir()
    render_page([(50, 100, "HELLO")]).save(pages / "001.png")
    return pages
