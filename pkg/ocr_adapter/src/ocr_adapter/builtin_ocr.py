"""Self-contained classical OCR: segmentation plus glyph template matching.

No models, no downloads: ink is segmented with connected components, glyphs
are grouped into lines and words by geometry, and each glyph is classified
against templates rendered from a system font (DejaVu). Shape matching is
IoU on size-normalized masks, disambiguated by aspect ratio and by height
relative to the line's cap height (which separates o/O-style case pairs and
punctuation from letters).

Built for machine-rendered pages at roughly 100-200 DPI with dark text on a
light background. It is the offline fallback engine; scanned or stylized
input should go through an ML engine instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import cv2
import numpy as np
from PIL import Image, ImageDraw, ImageFont

CHARSET = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789.,:;!?%&$()-'/"

NORM_SIZE = 24
TEMPLATE_FONT_SIZE = 64

# segmentation constants (pixels, at the 100-200 DPI this engine targets)
MIN_GLYPH_DIM = 2
MIN_GLYPH_AREA = 3
REGION_MIN_W = 80
REGION_MIN_H = 50
REGION_MERGE_GAP = 12
WORD_GAP_FRACTION = 0.30

FONT_CANDIDATES = (
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "DejaVuSans.ttf",
)


def load_template_font(size: int = TEMPLATE_FONT_SIZE):
    for candidate in FONT_CANDIDATES:
        try:
            return ImageFont.truetype(candidate, size)
        except OSError:
            continue
    return ImageFont.load_default()


def _normalize_mask(mask: np.ndarray) -> np.ndarray:
    """Tight-crop, scale longest side to NORM_SIZE keeping aspect, center-pad."""
    ys, xs = np.nonzero(mask)
    tight = mask[ys.min():ys.max() + 1, xs.min():xs.max() + 1]
    h, w = tight.shape
    scale = NORM_SIZE / max(h, w)
    th = max(1, round(h * scale))
    tw = max(1, round(w * scale))
    img = Image.fromarray((tight * 255).astype(np.uint8)).resize((tw, th), Image.BILINEAR)
    resized = np.asarray(img) > 127
    out = np.zeros((NORM_SIZE, NORM_SIZE), dtype=bool)
    oy = (NORM_SIZE - th) // 2
    ox = (NORM_SIZE - tw) // 2
    out[oy:oy + th, ox:ox + tw] = resized
    return out


@dataclass(frozen=True)
class GlyphTemplate:
    char: str
    mask: np.ndarray
    aspect: float
    rel_height: float  # ink height relative to the capital H


@lru_cache(maxsize=4)
def build_atlas(charset: str = CHARSET) -> tuple[GlyphTemplate, ...]:
    font = load_template_font()
    canvas = TEMPLATE_FONT_SIZE * 2

    def ink(char: str) -> np.ndarray:
        img = Image.new("L", (canvas, canvas), 255)
        ImageDraw.Draw(img).text((canvas // 4, canvas // 4), char, font=font, fill=0)
        return np.asarray(img) < 128

    cap = ink("H")
    ys, _ = np.nonzero(cap)
    cap_height = ys.max() - ys.min() + 1

    templates = []
    for char in charset:
        mask = ink(char)
        if not mask.any():
            continue
        ys, xs = np.nonzero(mask)
        h = ys.max() - ys.min() + 1
        w = xs.max() - xs.min() + 1
        templates.append(
            GlyphTemplate(
                char=char,
                mask=_normalize_mask(mask),
                aspect=w / h,
                rel_height=h / cap_height,
            )
        )
    return tuple(templates)


def classify_glyph(
    mask: np.ndarray, rel_height: float, atlas: tuple[GlyphTemplate, ...]
) -> tuple[str, float]:
    """Best-scoring template character for one glyph mask."""
    ys, xs = np.nonzero(mask)
    aspect = (xs.max() - xs.min() + 1) / (ys.max() - ys.min() + 1)
    norm = _normalize_mask(mask)
    best_char, best_score = "?", 0.0
    for tpl in atlas:
        inter = np.count_nonzero(norm & tpl.mask)
        union = np.count_nonzero(norm | tpl.mask)
        iou = inter / union if union else 0.0
        aspect_sim = min(aspect, tpl.aspect) / max(aspect, tpl.aspect)
        height_factor = max(0.0, 1.0 - 2.0 * abs(rel_height - tpl.rel_height))
        score = iou * (0.7 + 0.3 * aspect_sim) * height_factor
        if score > best_score:
            best_char, best_score = tpl.char, score
    return best_char, best_score


@dataclass
class _Component:
    x1: int
    y1: int
    x2: int
    y2: int
    ids: list[int]  # connected-component labels making up this glyph

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1


@dataclass(frozen=True)
class Word:
    text: str
    bbox: tuple[int, int, int, int]
    confidence: float


@dataclass(frozen=True)
class Region:
    label: str
    bbox: tuple[int, int, int, int]


def _binarize(gray: np.ndarray) -> np.ndarray:
    if float(gray.std()) < 2.0:  # blank page
        return np.zeros_like(gray, dtype=np.uint8)
    _, ink = cv2.threshold(gray, 0, 255, cv2.THRESH_BINARY_INV + cv2.THRESH_OTSU)
    if np.count_nonzero(ink) > 0.5 * ink.size:
        # dark-background page: this engine assumes dark ink on light ground
        return np.zeros_like(gray, dtype=np.uint8)
    return ink


def _group_lines(glyphs: list[_Component]) -> list[list[_Component]]:
    lines: list[list[_Component]] = []
    for glyph in sorted(glyphs, key=lambda g: (g.y1, g.x1)):
        placed = False
        for line in lines:
            top = min(g.y1 for g in line)
            bottom = max(g.y2 for g in line)
            overlap = min(bottom, glyph.y2) - max(top, glyph.y1)
            if overlap >= 0.5 * min(glyph.height, bottom - top):
                line.append(glyph)
                placed = True
                break
        if not placed:
            lines.append([glyph])
    for line in lines:
        line.sort(key=lambda g: g.x1)
    lines.sort(key=lambda line: min(g.y1 for g in line))
    return lines


def _merge_stacked(line: list[_Component]) -> list[_Component]:
    """Join vertically stacked parts (i/j dots, colons) that share x-range."""
    merged: list[_Component] = []
    for glyph in line:
        if merged:
            prev = merged[-1]
            overlap = min(prev.x2, glyph.x2) - max(prev.x1, glyph.x1)
            if overlap >= 0.6 * min(prev.width, glyph.width):
                prev.x1 = min(prev.x1, glyph.x1)
                prev.y1 = min(prev.y1, glyph.y1)
                prev.x2 = max(prev.x2, glyph.x2)
                prev.y2 = max(prev.y2, glyph.y2)
                prev.ids.extend(glyph.ids)
                continue
        merged.append(glyph)
    return merged


BAR_CHARS = {"I", "l"}


def _fix_bar_case(chars: list[str]) -> list[str]:
    """Resolve the I/l bar ambiguity by the case of the word's other letters."""
    voters = [c for c in chars if c.isalpha() and c not in BAR_CHARS]
    if not voters:
        return chars
    if all(c.isupper() for c in voters):
        return ["I" if c == "l" else c for c in chars]
    if all(c.islower() for c in voters):
        return ["l" if c == "I" else c for c in chars]
    return chars


def _split_words(line: list[_Component]) -> list[list[_Component]]:
    line_height = max(g.height for g in line)
    gap_limit = max(3.0, WORD_GAP_FRACTION * line_height)
    words: list[list[_Component]] = [[line[0]]]
    for prev, glyph in zip(line, line[1:]):
        if glyph.x1 - prev.x2 > gap_limit:
            words.append([glyph])
        else:
            words[-1].append(glyph)
    return words


def _cap_height(line: list[_Component]) -> float:
    """Line cap height, robust to descenders (Q, g, y) inflating the maximum."""
    heights = sorted(g.height for g in line)
    tall = [h for h in heights if h >= 0.6 * heights[-1]]
    return float(tall[len(tall) // 2])


class BuiltinEngine:
    """Dependency-free template-matching OCR plus large-region detection."""

    name = "builtin-template"

    def __init__(self, charset: str = CHARSET):
        from . import __version__

        self.version = __version__
        self.atlas = build_atlas(charset)

    def detect(self, image: Image.Image) -> tuple[list[Word], list[Region]]:
        gray = np.asarray(image.convert("L"))
        ink = _binarize(gray)
        if not ink.any():
            return [], []
        n_labels, labels, stats, _ = cv2.connectedComponentsWithStats(ink, connectivity=8)

        glyphs: list[_Component] = []
        region_parts: list[_Component] = []
        for label in range(1, n_labels):
            x, y, w, h, area = stats[label]
            comp = _Component(int(x), int(y), int(x + w), int(y + h), [label])
            if w >= REGION_MIN_W and h >= REGION_MIN_H:
                region_parts.append(comp)
            elif w >= MIN_GLYPH_DIM and h >= MIN_GLYPH_DIM and area >= MIN_GLYPH_AREA:
                glyphs.append(comp)

        words: list[Word] = []
        for line in _group_lines(glyphs):
            line = _merge_stacked(line)
            cap_height = _cap_height(line)
            for group in _split_words(line):
                chars = []
                scores = []
                for glyph in group:
                    window = labels[glyph.y1:glyph.y2, glyph.x1:glyph.x2]
                    mask = np.isin(window, glyph.ids)
                    char, score = classify_glyph(mask, glyph.height / cap_height, self.atlas)
                    chars.append(char)
                    scores.append(score)
                words.append(
                    Word(
                        text="".join(_fix_bar_case(chars)),
                        bbox=(
                            min(g.x1 for g in group),
                            min(g.y1 for g in group),
                            max(g.x2 for g in group),
                            max(g.y2 for g in group),
                        ),
                        confidence=float(np.mean(scores)) if scores else 0.0,
                    )
                )

        regions = [
            Region("figure", (part.x1, part.y1, part.x2, part.y2))
            for part in _merge_regions(region_parts)
        ]
        return words, regions


def _merge_regions(parts: list[_Component]) -> list[_Component]:
    parts = [
        _Component(p.x1, p.y1, p.x2, p.y2, list(p.ids))
        for p in sorted(parts, key=lambda p: (p.y1, p.x1))
    ]
    merged: list[_Component] = []
    for part in parts:
        for existing in merged:
            gap_x = max(existing.x1, part.x1) - min(existing.x2, part.x2)
            gap_y = max(existing.y1, part.y1) - min(existing.y2, part.y2)
            if gap_x <= REGION_MERGE_GAP and gap_y <= REGION_MERGE_GAP:
                existing.x1 = min(existing.x1, part.x1)
                existing.y1 = min(existing.y1, part.y1)
                existing.x2 = max(existing.x2, part.x2)
                existing.y2 = max(existing.y2, part.y2)
                break
        else:
            merged.append(part)
    return merged
