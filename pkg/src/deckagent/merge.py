"""Rebuild coherent text blocks from fragmented OCR boxes.

OCR tends to split one visual text block into several boxes. Boxes whose
minimum edge-to-edge distance is at most ``tau`` pixels (default 15) are
linked; each connected component of that graph is merged into one element
whose box is the union and whose text is the members' text joined with
single spaces in reading order (top-to-bottom, then left-to-right). Only
text elements participate; detector regions like charts and tables are
semantic units already and pass through untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import pairwise_box_distances
from .document import BoundingBox, Document, Element, Page

DEFAULT_TAU = 15.0


@dataclass(frozen=True, slots=True)
class AdjacencyGraph:
    """Undirected graph over boxes 1..n; edges hold pairs (i, j) with i < j."""

    n: int
    edges: frozenset[tuple[int, int]]


@dataclass(frozen=True, slots=True)
class MergeComponent:
    member_indices: frozenset[int]
    reading_order: tuple[int, ...]


def min_box_distance(a: BoundingBox, b: BoundingBox) -> float:
    """Minimum pixel distance between two boxes; 0 when they overlap or touch."""
    if a.x1 <= b.x2 and b.x1 <= a.x2:
        dh = 0.0
    else:
        dh = min(abs(a.x2 - b.x1), abs(b.x2 - a.x1))
    if a.y1 <= b.y2 and b.y1 <= a.y2:
        dv = 0.0
    else:
        dv = min(abs(a.y2 - b.y1), abs(b.y2 - a.y1))
    return float(np.sqrt(dh * dh + dv * dv))


def _boxes_array(boxes: list[BoundingBox]) -> np.ndarray:
    return np.array([b.as_tuple() for b in boxes], dtype=np.float64).reshape(-1, 4)


def build_adjacency(boxes: list[BoundingBox], tau: float = DEFAULT_TAU) -> AdjacencyGraph:
    """Link every pair of boxes at distance <= tau (inclusive)."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    n = len(boxes)
    if n < 2:
        return AdjacencyGraph(n=n, edges=frozenset())
    dist = pairwise_box_distances(_boxes_array(boxes))
    edges = {
        (i + 1, j + 1)
        for i in range(n)
        for j in range(i + 1, n)
        if dist[i, j] <= tau
    }
    return AdjacencyGraph(n=n, edges=frozenset(edges))


def connected_components(g: AdjacencyGraph, boxes: list[BoundingBox]) -> list[MergeComponent]:
    """DFS components of g, ordered by smallest member; reading order by (y1, x1).

    Exact (y1, x1) ties keep the original input order.
    """
    neighbors: dict[int, list[int]] = {i: [] for i in range(1, g.n + 1)}
    for i, j in g.edges:
        neighbors[i].append(j)
        neighbors[j].append(i)

    seen: set[int] = set()
    components: list[MergeComponent] = []
    for start in range(1, g.n + 1):
        if start in seen:
            continue
        stack = [start]
        members: set[int] = set()
        while stack:
            v = stack.pop()
            if v in members:
                continue
            members.add(v)
            stack.extend(w for w in neighbors[v] if w not in members)
        seen |= members
        order = sorted(members, key=lambda i: (boxes[i - 1].y1, boxes[i - 1].x1, i))
        components.append(MergeComponent(frozenset(members), tuple(order)))
    return components


def merge_elements(elements: list[Element], tau: float = DEFAULT_TAU) -> list[Element]:
    """Merge nearby text elements of a single page; others pass through as is.

    Merged elements get a deterministic id joining the source ids in reading
    order with "+". Output keeps first-appearance order.
    """
    if not elements:
        return []
    pages = {e.page_index for e in elements}
    if len(pages) > 1:
        raise ValueError(f"elements span multiple pages: {sorted(pages)}")

    text_positions = [i for i, e in enumerate(elements) if e.etype.is_text]
    text_elements = [elements[i] for i in text_positions]
    graph = build_adjacency([e.bbox for e in text_elements], tau)
    components = connected_components(graph, [e.bbox for e in text_elements])

    merged: list[tuple[int, Element]] = []
    for comp in components:
        members = [text_elements[i - 1] for i in comp.reading_order]
        first_pos = min(text_positions[i - 1] for i in comp.member_indices)
        if len(members) == 1:
            merged.append((first_pos, members[0]))
            continue
        bbox = members[0].bbox
        for m in members[1:]:
            bbox = bbox.union(m.bbox)
        merged.append(
            (
                first_pos,
                Element(
                    element_id="+".join(m.element_id for m in members),
                    page_index=members[0].page_index,
                    etype=members[0].etype,
                    bbox=bbox,
                    verbatim=" ".join(m.verbatim for m in members),
                ),
            )
        )

    passthrough = [(i, e) for i, e in enumerate(elements) if not e.etype.is_text]
    return [e for _, e in sorted(merged + passthrough, key=lambda t: t[0])]


def merge_document(doc: Document, tau: float = DEFAULT_TAU) -> tuple[Document, dict]:
    """Merge every page of a document; returns the new document and counts."""
    before = 0
    after = 0
    pages: list[Page] = []
    for page in doc.pages:
        new_elements = merge_elements(list(page.elements), tau)
        before += len(page.elements)
        after += len(new_elements)
        pages.append(
            Page(page.index, page.raster_path, page.width, page.height, tuple(new_elements))
        )
    stats = {"elements_before": before, "elements_after": after, "tau": tau}
    return Document(doc.doc_id, tuple(pages)), stats
