"""Canonical document model: pages, elements, geometry, and disk format.

A document lives in a directory with ``manifest.json`` (doc id + page table),
``elements.json`` (flat element list), and one PNG raster per page. This
format is the hand-off contract between extraction tooling and everything
downstream, so loading is strict: anything ``validate_document`` would flag
is rejected at load time with a located error message.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

CANONICAL_ELEMENT_TYPES = ("text", "image", "chart", "table", "icon", "button")


class DocumentError(Exception):
    """Raised when a document directory cannot be loaded."""


@dataclass(frozen=True, slots=True)
class BoundingBox:
    """Pixel box in page-image space, origin top-left, x1 < x2 and y1 < y2."""

    x1: int
    y1: int
    x2: int
    y2: int

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x1, self.y1, self.x2, self.y2)

    def union(self, other: "BoundingBox") -> "BoundingBox":
        return BoundingBox(
            min(self.x1, other.x1),
            min(self.y1, other.y1),
            max(self.x2, other.x2),
            max(self.y2, other.y2),
        )

    def contains(self, other: "BoundingBox") -> bool:
        return (
            self.x1 <= other.x1
            and self.y1 <= other.y1
            and other.x2 <= self.x2
            and other.y2 <= self.y2
        )


@dataclass(frozen=True, slots=True)
class ElementType:
    """Element category. Unknown detector labels survive as kind="other"."""

    kind: str
    label: str

    @classmethod
    def parse(cls, raw: str) -> "ElementType":
        norm = raw.strip().lower()
        if norm in CANONICAL_ELEMENT_TYPES:
            return cls(norm, norm)
        return cls("other", raw)

    @property
    def is_text(self) -> bool:
        return self.kind == "text"

    def to_json(self) -> str:
        return self.kind if self.kind != "other" else self.label


@dataclass(frozen=True, slots=True)
class Element:
    element_id: str
    page_index: int
    etype: ElementType
    bbox: BoundingBox
    verbatim: str = ""


@dataclass(frozen=True, slots=True)
class Page:
    index: int
    raster_path: Path
    width: int
    height: int
    elements: tuple[Element, ...] = ()


@dataclass(frozen=True, slots=True)
class Document:
    doc_id: str
    pages: tuple[Page, ...]

    def page(self, index: int) -> Page:
        for p in self.pages:
            if p.index == index:
                return p
        raise KeyError(f"no page {index} in document {self.doc_id}")

    def iter_elements(self) -> Iterator[Element]:
        for p in self.pages:
            yield from p.elements

    def element(self, element_id: str) -> Element:
        for e in self.iter_elements():
            if e.element_id == element_id:
                return e
        raise KeyError(f"no element {element_id!r} in document {self.doc_id}")


@dataclass(frozen=True, slots=True)
class Violation:
    """One invariant breach, with a machine-readable code and a location."""

    code: str
    message: str
    page_index: int | None = None
    element_id: str | None = None

    def __str__(self) -> str:
        where = ""
        if self.element_id is not None:
            where = f" [element {self.element_id}]"
        elif self.page_index is not None:
            where = f" [page {self.page_index}]"
        return f"{self.code}: {self.message}{where}"


def validate_document(doc: Document) -> list[Violation]:
    """Check every model invariant; an empty list means the document is sound."""
    out: list[Violation] = []
    if not doc.pages:
        out.append(Violation("EmptyDocument", "document has no pages"))
        return out

    indices = [p.index for p in doc.pages]
    if indices[0] != 1:
        out.append(Violation("PageIndexGap", f"pages must start at 1, got {indices[0]}"))
    for prev, cur in zip(indices, indices[1:]):
        if cur == prev:
            out.append(Violation("DuplicatePageIndex", f"duplicate page index {cur}"))
        elif cur != prev + 1:
            out.append(Violation("PageIndexGap", f"page index gap after {prev}"))
    n_pages = len(doc.pages)

    for page in doc.pages:
        if page.width <= 0 or page.height <= 0:
            out.append(
                Violation(
                    "BadPageSize",
                    f"page size {page.width}x{page.height} must be positive",
                    page_index=page.index,
                )
            )
        if not page.raster_path.is_file():
            out.append(
                Violation(
                    "RasterMissing",
                    f"raster file not found: {page.raster_path}",
                    page_index=page.index,
                )
            )

    ids: set[str] = set()
    for page in doc.pages:
        for el in page.elements:
            if el.element_id in ids:
                out.append(
                    Violation(
                        "DuplicateElementId",
                        f"element id {el.element_id!r} used more than once",
                        element_id=el.element_id,
                    )
                )
            ids.add(el.element_id)

            if not (1 <= el.page_index <= n_pages):
                out.append(
                    Violation(
                        "PageIndexOutOfRange",
                        f"element references page {el.page_index} of {n_pages}",
                        element_id=el.element_id,
                    )
                )
                continue
            if el.page_index != page.index:
                out.append(
                    Violation(
                        "PageIndexMismatch",
                        f"element stored under page {page.index} but references {el.page_index}",
                        element_id=el.element_id,
                    )
                )

            b = el.bbox
            if b.x1 >= b.x2 or b.y1 >= b.y2:
                out.append(
                    Violation(
                        "DegenerateBox",
                        f"box {b.as_tuple()} has no area",
                        element_id=el.element_id,
                    )
                )
            if min(b.x1, b.y1) < 0:
                out.append(
                    Violation(
                        "NegativeCoordinate",
                        f"box {b.as_tuple()} has negative coordinates",
                        element_id=el.element_id,
                    )
                )
            if page.width > 0 and page.height > 0 and (b.x2 > page.width or b.y2 > page.height):
                out.append(
                    Violation(
                        "BoxOutsideRaster",
                        f"box {b.as_tuple()} exceeds page raster {page.width}x{page.height}",
                        element_id=el.element_id,
                    )
                )
            if el.etype.is_text and not el.verbatim:
                out.append(
                    Violation(
                        "EmptyTextElement",
                        "text element has empty verbatim text",
                        element_id=el.element_id,
                    )
                )
    return out


def _read_json(path: Path):
    if not path.is_file():
        raise DocumentError(f"missing {path.name}: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DocumentError(f"{path}: invalid JSON ({exc})") from exc


def _require(cond: bool, where: str, msg: str) -> None:
    if not cond:
        raise DocumentError(f"{where}: {msg}")


def load_document(docdir: str | Path) -> Document:
    """Load and validate a document directory; raises DocumentError on any flaw."""
    docdir = Path(docdir)
    manifest = _read_json(docdir / "manifest.json")
    _require(isinstance(manifest, dict), "manifest.json", "top level must be an object")
    _require("doc_id" in manifest, "manifest.json", "missing field 'doc_id'")
    _require("pages" in manifest and isinstance(manifest["pages"], list), "manifest.json", "missing field 'pages'")

    pages: list[Page] = []
    for i, entry in enumerate(manifest["pages"]):
        where = f"manifest.json pages[{i}]"
        for key in ("index", "raster", "width", "height"):
            _require(key in entry, where, f"missing field {key!r}")
        pages.append(
            Page(
                index=int(entry["index"]),
                raster_path=docdir / str(entry["raster"]),
                width=int(entry["width"]),
                height=int(entry["height"]),
            )
        )

    raw_elements = _read_json(docdir / "elements.json")
    _require(isinstance(raw_elements, list), "elements.json", "top level must be an array")
    by_page: dict[int, list[Element]] = {p.index: [] for p in pages}
    for i, entry in enumerate(raw_elements):
        where = f"elements.json [{i}]"
        for key in ("element_id", "page_index", "type", "bbox"):
            _require(key in entry, where, f"missing field {key!r}")
        bbox = entry["bbox"]
        _require(
            isinstance(bbox, list) and len(bbox) == 4,
            where,
            "bbox must be [x1, y1, x2, y2]",
        )
        el = Element(
            element_id=str(entry["element_id"]),
            page_index=int(entry["page_index"]),
            etype=ElementType.parse(str(entry["type"])),
            bbox=BoundingBox(*(int(v) for v in bbox)),
            verbatim=str(entry.get("text", "")),
        )
        if el.page_index not in by_page:
            raise DocumentError(
                f"{where}: PageIndexOutOfRange: element {el.element_id!r} "
                f"references page {el.page_index}, manifest has {len(pages)} pages"
            )
        by_page[el.page_index].append(el)

    doc = Document(
        doc_id=str(manifest["doc_id"]),
        pages=tuple(
            Page(p.index, p.raster_path, p.width, p.height, tuple(by_page[p.index]))
            for p in pages
        ),
    )

    violations = validate_document(doc)
    if violations:
        listing = "; ".join(str(v) for v in violations)
        raise DocumentError(f"{docdir}: {listing}")
    return doc


def save_document(doc: Document, docdir: str | Path) -> None:
    """Write the canonical on-disk form, copying page rasters into docdir."""
    docdir = Path(docdir)
    docdir.mkdir(parents=True, exist_ok=True)
    page_entries = []
    for page in doc.pages:
        raster_name = f"page_{page.index:04d}.png"
        target = docdir / raster_name
        if page.raster_path.resolve() != target.resolve():
            shutil.copyfile(page.raster_path, target)
        page_entries.append(
            {"index": page.index, "raster": raster_name, "width": page.width, "height": page.height}
        )
    manifest = {"doc_id": doc.doc_id, "pages": page_entries}
    elements = [
        {
            "element_id": el.element_id,
            "page_index": el.page_index,
            "type": el.etype.to_json(),
            "bbox": list(el.bbox.as_tuple()),
            "text": el.verbatim,
        }
        for el in doc.iter_elements()
    ]
    (docdir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (docdir / "elements.json").write_text(
        json.dumps(elements, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
