"""Detector engine registry.

Every engine turns a page image into raw boxes carrying a detector label,
pixel bbox, and (for text) the recognized string. ``auto`` prefers EasyOCR
when it is importable and falls back to the builtin template matcher.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .builtin_ocr import BuiltinEngine


class EngineError(Exception):
    pass


@dataclass(frozen=True)
class RawBox:
    label: str
    bbox: tuple[int, int, int, int]
    text: str = ""
    confidence: float = 1.0


class BuiltinDetector:
    def __init__(self):
        self._engine = BuiltinEngine()
        self.name = self._engine.name
        self.version = self._engine.version

    def detect(self, image: Image.Image) -> list[RawBox]:
        words, regions = self._engine.detect(image)
        boxes = [
            RawBox("text", w.bbox, text=w.text, confidence=w.confidence) for w in words
        ]
        boxes += [RawBox(r.label, r.bbox) for r in regions]
        return boxes


class EasyOCRDetector:
    """Wraps easyocr when installed; text boxes only."""

    name = "easyocr"

    def __init__(self, languages=("en",)):
        try:
            import easyocr
        except ImportError as exc:
            raise EngineError("easyocr is not installed") from exc
        self.version = getattr(easyocr, "__version__", "unknown")
        self._reader = easyocr.Reader(list(languages), gpu=False, verbose=False)

    def detect(self, image: Image.Image) -> list[RawBox]:
        results = self._reader.readtext(np.asarray(image.convert("RGB")))
        boxes = []
        for quad, text, confidence in results:
            xs = [int(p[0]) for p in quad]
            ys = [int(p[1]) for p in quad]
            boxes.append(
                RawBox("text", (min(xs), min(ys), max(xs), max(ys)),
                       text=text, confidence=float(confidence))
            )
        return boxes


def resolve_engine(name: str = "auto"):
    if name == "auto":
        try:
            return EasyOCRDetector()
        except EngineError:
            return BuiltinDetector()
    if name == "easyocr":
        return EasyOCRDetector()
    if name == "builtin":
        return BuiltinDetector()
    raise EngineError(f"unknown engine {name!r} (use auto, easyocr, or builtin)")
