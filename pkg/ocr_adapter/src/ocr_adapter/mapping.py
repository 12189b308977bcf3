"""Detector-label to canonical element-type mapping, shipped and versioned.

Canonical types are the ones the downstream document format accepts: text,
image, chart, table, icon, button. Labels missing from the table pass through
unchanged and land in the catch-all "other" bucket downstream.
"""

from __future__ import annotations

MAPPING_VERSION = "1"

# covers our builtin engine labels plus common layout-detector vocabularies
LABEL_MAP = {
    "text": "text",
    "title": "text",
    "section_header": "text",
    "caption": "text",
    "footnote": "text",
    "list_item": "text",
    "paragraph": "text",
    "page_header": "text",
    "page_footer": "text",
    "figure": "image",
    "picture": "image",
    "image": "image",
    "photo": "image",
    "chart": "chart",
    "graph": "chart",
    "plot": "chart",
    "table": "table",
    "icon": "icon",
    "logo": "icon",
    "button": "button",
}


def map_label(label: str) -> str:
    """Canonical type for a detector label; unmapped labels pass through."""
    return LABEL_MAP.get(label.strip().lower(), label)
