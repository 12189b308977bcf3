"""Extraction pipeline: rasterize, detect, map labels, emit the contract files.

The output directory is the canonical document format consumed downstream:
manifest.json, elements.json, and one PNG per page. Both JSON files are
validated against the format schema before anything is written. No merging
happens here; fragmented text boxes are merged downstream at ingest.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
from PIL import Image

from .engines import RawBox, resolve_engine
from .mapping import MAPPING_VERSION, map_label
from .rasterize import PageRaster, SkippedPage, rasterize

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["doc_id", "pages"],
    "properties": {
        "doc_id": {"type": "string", "minLength": 1},
        "pages": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["index", "raster", "width", "height"],
                "properties": {
                    "index": {"type": "integer", "minimum": 1},
                    "raster": {"type": "string"},
                    "width": {"type": "integer", "minimum": 1},
                    "height": {"type": "integer", "minimum": 1},
                },
            },
        },
    },
}

ELEMENTS_SCHEMA = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["element_id", "page_index", "type", "bbox", "text"],
        "properties": {
            "element_id": {"type": "string", "minLength": 1},
            "page_index": {"type": "integer", "minimum": 1},
            "type": {"type": "string", "minLength": 1},
            "bbox": {
                "type": "array",
                "minItems": 4,
                "maxItems": 4,
                "items": {"type": "integer", "minimum": 0},
            },
            "text": {"type": "string"},
        },
    },
}


class ExtractionError(Exception):
    pass


@dataclass
class ExtractionReport:
    doc_id: str
    engine_name: str
    engine_version: str
    mapping_version: str
    dpi: int
    page_counts: dict[int, int] = field(default_factory=dict)
    skipped: list[SkippedPage] = field(default_factory=list)
    wall_time_s: float = 0.0

    @property
    def total_elements(self) -> int:
        return sum(self.page_counts.values())

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "engine": {"name": self.engine_name, "version": self.engine_version},
            "mapping_version": self.mapping_version,
            "dpi": self.dpi,
            "page_counts": {str(k): v for k, v in sorted(self.page_counts.items())},
            "total_elements": self.total_elements,
            "skipped": [{"source": s.source, "error": s.error} for s in self.skipped],
            "wall_time_s": round(self.wall_time_s, 3),
        }


def _clamp_box(box: RawBox, page: PageRaster) -> tuple[int, int, int, int] | None:
    x1 = max(0, min(box.bbox[0], page.width))
    y1 = max(0, min(box.bbox[1], page.height))
    x2 = max(0, min(box.bbox[2], page.width))
    y2 = max(0, min(box.bbox[3], page.height))
    if x1 >= x2 or y1 >= y2:
        return None
    return (x1, y1, x2, y2)


def extract(
    input_path: str | Path,
    out_dir: str | Path,
    *,
    dpi: int = 144,
    engine: str = "auto",
    allow_skips: bool = False,
    doc_id: str | None = None,
) -> ExtractionReport:
    """Run the full pipeline; returns the report (also written as report.json)."""
    started = time.perf_counter()
    input_path = Path(input_path)
    out_dir = Path(out_dir)
    detector = resolve_engine(engine)
    pages, skipped = rasterize(input_path, out_dir, dpi=dpi, allow_skips=allow_skips)

    report = ExtractionReport(
        doc_id=doc_id or input_path.stem,
        engine_name=detector.name,
        engine_version=detector.version,
        mapping_version=MAPPING_VERSION,
        dpi=dpi,
        skipped=list(skipped),
    )

    elements: list[dict] = []
    for page in pages:
        with Image.open(page.path) as img:
            boxes = detector.detect(img.convert("RGB"))
        count = 0
        for box in boxes:
            bbox = _clamp_box(box, page)
            if bbox is None:
                continue
            etype = map_label(box.label)
            text = box.text.strip() if etype == "text" else ""
            if etype == "text" and not text:
                continue
            count += 1
            elements.append(
                {
                    "element_id": f"p{page.index:04d}e{count:03d}",
                    "page_index": page.index,
                    "type": etype,
                    "bbox": list(bbox),
                    "text": text,
                }
            )
        report.page_counts[page.index] = count

    manifest = {
        "doc_id": report.doc_id,
        "pages": [
            {"index": p.index, "raster": p.path.name, "width": p.width, "height": p.height}
            for p in pages
        ],
    }
    try:
        jsonschema.validate(manifest, MANIFEST_SCHEMA)
        jsonschema.validate(elements, ELEMENTS_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ExtractionError(f"emitted document violates the format contract: {exc.message}") from exc

    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out_dir / "elements.json").write_text(
        json.dumps(elements, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    report.wall_time_s = time.perf_counter() - started
    (out_dir / "report.json").write_text(
        json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return report
