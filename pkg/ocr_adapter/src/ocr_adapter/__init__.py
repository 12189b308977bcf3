"""Extraction adapter producing the canonical deckagent document format."""

__version__ = "0.1.0"

from .extract import ExtractionError, ExtractionReport, extract
from .engines import EngineError, RawBox, resolve_engine
from .rasterize import RasterizeError, rasterize
