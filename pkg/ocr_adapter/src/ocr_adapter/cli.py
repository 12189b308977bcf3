"""CLI: deckocr extract --input <path> --out <docdir> [--dpi N] [--allow-skips]."""

from __future__ import annotations

import sys

import click

from .engines import EngineError
from .extract import ExtractionError, extract
from .rasterize import RasterizeError


@click.group()
def main():
    """Extraction front end for the deckagent document format."""


@main.command("extract")
@click.option("--input", "input_path", required=True, type=click.Path(exists=False))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--dpi", type=int, default=144, show_default=True)
@click.option("--allow-skips", is_flag=True, help="Skip unreadable pages instead of aborting.")
@click.option("--engine", default="auto", show_default=True,
              type=click.Choice(["auto", "easyocr", "builtin"]))
@click.option("--doc-id", default=None, help="Override the document id (default: input name).")
def extract_cmd(input_path, out_dir, dpi, allow_skips, engine, doc_id):
    """Turn a PDF or page-image folder into a canonical document directory."""
    try:
        report = extract(
            input_path, out_dir, dpi=dpi, engine=engine,
            allow_skips=allow_skips, doc_id=doc_id,
        )
    except (RasterizeError, EngineError, ExtractionError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(
        f"extracted {report.total_elements} elements over {len(report.page_counts)} pages "
        f"with {report.engine_name} {report.engine_version} into {out_dir}"
    )
    if report.skipped:
        click.echo(f"skipped {len(report.skipped)} unreadable pages (see report.json)", err=True)


if __name__ == "__main__":
    main()
