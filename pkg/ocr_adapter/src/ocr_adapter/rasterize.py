"""Rasterize input (image folder, single image, or PDF) into page PNGs."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from PIL import Image

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}


class RasterizeError(Exception):
    pass


@dataclass(frozen=True)
class PageRaster:
    index: int
    path: Path
    width: int
    height: int
    source: str


@dataclass(frozen=True)
class SkippedPage:
    source: str
    error: str


def _page_sources(input_path: Path) -> list:
    if input_path.is_dir():
        files = sorted(
            p for p in input_path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
        )
        if not files:
            raise RasterizeError(f"no page images found in {input_path}")
        return files
    if input_path.suffix.lower() in IMAGE_SUFFIXES:
        return [input_path]
    if input_path.suffix.lower() == ".pdf":
        return _pdf_pages(input_path)
    raise RasterizeError(f"unsupported input: {input_path}")


def _pdf_pages(pdf_path: Path) -> list:
    try:
        import pypdfium2
    except ImportError:
        pypdfium2 = None
    if pypdfium2 is not None:
        doc = pypdfium2.PdfDocument(str(pdf_path))
        return [("pdfium", doc, i) for i in range(len(doc))]
    try:
        import fitz
    except ImportError as exc:
        raise RasterizeError(
            "PDF input needs pypdfium2 or PyMuPDF; install one or pass a page-image folder"
        ) from exc
    doc = fitz.open(str(pdf_path))
    return [("fitz", doc, i) for i in range(doc.page_count)]


def _load_source(source, dpi: int) -> Image.Image:
    if isinstance(source, Path):
        with Image.open(source) as img:
            return img.convert("RGB")
    kind, doc, page_no = source
    scale = dpi / 72.0
    if kind == "pdfium":
        page = doc[page_no]
        return page.render(scale=scale).to_pil().convert("RGB")
    import fitz  # present when _pdf_pages chose the fitz path

    page = doc.load_page(page_no)
    pix = page.get_pixmap(matrix=fitz.Matrix(scale, scale))
    return Image.frombytes("RGB", (pix.width, pix.height), pix.samples)


def _describe(source) -> str:
    if isinstance(source, Path):
        return source.name
    return f"pdf-page-{source[2] + 1}"


def rasterize(
    input_path: str | Path,
    out_dir: str | Path,
    dpi: int = 144,
    allow_skips: bool = False,
) -> tuple[list[PageRaster], list[SkippedPage]]:
    """Write one PNG per readable page; pages are renumbered contiguously.

    Unreadable pages abort the run unless ``allow_skips`` is set, in which
    case they are recorded and the remaining pages close the index gap.
    """
    input_path = Path(input_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pages: list[PageRaster] = []
    skipped: list[SkippedPage] = []
    for source in _page_sources(input_path):
        label = _describe(source)
        try:
            img = _load_source(source, dpi)
        except Exception as exc:
            if not allow_skips:
                raise RasterizeError(f"unreadable page {label}: {exc}") from exc
            skipped.append(SkippedPage(source=label, error=str(exc)))
            continue
        index = len(pages) + 1
        raster = out_dir / f"page_{index:04d}.png"
        img.save(raster, format="PNG")
        pages.append(PageRaster(index, raster, img.width, img.height, label))
    if not pages:
        raise RasterizeError(f"no readable pages in {input_path}")
    return pages, skipped
