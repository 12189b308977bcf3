"""Hot numeric kernels: pairwise box distances and Levenshtein distance.

Both kernels ship in two flavors: a numba ``@njit`` version and a pure-numpy
version. The active flavor is picked at import time — numba when importable,
unless ``DECKAGENT_PURE_NUMPY=1`` forces the numpy path (useful for
environments without a working JIT and for ``benchmarks/bench_kernels.py``,
which times both). Both flavors compute identical values.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


def pairwise_box_distances_numpy(boxes: np.ndarray) -> np.ndarray:
    """Pairwise gap distances for ``boxes`` of shape (n, 4) as [x1, y1, x2, y2].

    Distance between two boxes is sqrt(dh^2 + dv^2), where dh is 0 when the
    boxes overlap on the x axis and otherwise the smaller of |x2_i - x1_j| and
    |x2_j - x1_i| (the edge-to-edge gap for valid boxes); dv likewise on y.
    """
    boxes = np.asarray(boxes, dtype=np.float64)
    x1, y1, x2, y2 = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]

    dh = np.abs(x2[:, None] - x1[None, :])
    dh = np.minimum(dh, dh.T)
    overlap_h = (x1[:, None] <= x2[None, :]) & (x1[None, :] <= x2[:, None])
    dh = np.where(overlap_h, 0.0, dh)

    dv = np.abs(y2[:, None] - y1[None, :])
    dv = np.minimum(dv, dv.T)
    overlap_v = (y1[:, None] <= y2[None, :]) & (y1[None, :] <= y2[:, None])
    dv = np.where(overlap_v, 0.0, dv)

    return np.sqrt(dh * dh + dv * dv)


def levenshtein_numpy(a: np.ndarray, b: np.ndarray) -> int:
    """Levenshtein distance between two int code arrays, row-vectorized."""
    la, lb = a.size, b.size
    if la == 0:
        return int(lb)
    if lb == 0:
        return int(la)
    offsets = np.arange(lb + 1, dtype=np.int64)
    prev = offsets.copy()
    cur = np.empty(lb + 1, dtype=np.int64)
    for i in range(1, la + 1):
        cur[0] = i
        cur[1:] = np.minimum(prev[:-1] + (b != a[i - 1]), prev[1:] + 1)
        # fold in insertions: cur[j] = min(cur[j], cur[j-1] + 1) left to right,
        # equivalent to a running minimum of (cur - j) shifted back by +j
        cur = offsets + np.minimum.accumulate(cur - offsets)
        prev, cur = cur, prev
    return int(prev[lb])


if HAVE_NUMBA:

    @njit(cache=True)
    def pairwise_box_distances_numba(boxes: np.ndarray) -> np.ndarray:  # pragma: no cover - jit
        n = boxes.shape[0]
        out = np.zeros((n, n), dtype=np.float64)
        for i in range(n):
            x1i, y1i, x2i, y2i = boxes[i, 0], boxes[i, 1], boxes[i, 2], boxes[i, 3]
            for j in range(i + 1, n):
                x1j, y1j, x2j, y2j = boxes[j, 0], boxes[j, 1], boxes[j, 2], boxes[j, 3]
                if x1i <= x2j and x1j <= x2i:
                    dh = 0.0
                else:
                    dh = min(abs(x2i - x1j), abs(x2j - x1i))
                if y1i <= y2j and y1j <= y2i:
                    dv = 0.0
                else:
                    dv = min(abs(y2i - y1j), abs(y2j - y1i))
                d = np.sqrt(dh * dh + dv * dv)
                out[i, j] = d
                out[j, i] = d
        return out

    @njit(cache=True)
    def levenshtein_numba(a: np.ndarray, b: np.ndarray) -> int:  # pragma: no cover - jit
        la, lb = a.size, b.size
        if la == 0:
            return lb
        if lb == 0:
            return la
        prev = np.arange(lb + 1, dtype=np.int64)
        cur = np.empty(lb + 1, dtype=np.int64)
        for i in range(1, la + 1):
            cur[0] = i
            ai = a[i - 1]
            for j in range(1, lb + 1):
                cost = 0 if b[j - 1] == ai else 1
                best = prev[j - 1] + cost
                if prev[j] + 1 < best:
                    best = prev[j] + 1
                if cur[j - 1] + 1 < best:
                    best = cur[j - 1] + 1
                cur[j] = best
            prev, cur = cur, prev
        return int(prev[lb])


def _force_numpy(environ=os.environ) -> bool:
    return environ.get("DECKAGENT_PURE_NUMPY", "").strip() not in ("", "0")


def select_impls(environ=os.environ) -> dict:
    """Resolve which kernel flavor to use; exposed for tests and benchmarks."""
    if HAVE_NUMBA and not _force_numpy(environ):
        return {
            "active": "numba",
            "pairwise_box_distances": pairwise_box_distances_numba,
            "levenshtein": levenshtein_numba,
        }
    return {
        "active": "numpy",
        "pairwise_box_distances": pairwise_box_distances_numpy,
        "levenshtein": levenshtein_numpy,
    }


_impls = select_impls()
ACTIVE = _impls["active"]
pairwise_box_distances = _impls["pairwise_box_distances"]
_levenshtein_codes = _impls["levenshtein"]


def levenshtein(a: str, b: str) -> int:
    """Character-level Levenshtein distance between two strings."""
    ca = np.array([ord(c) for c in a], dtype=np.int32)
    cb = np.array([ord(c) for c in b], dtype=np.int32)
    return int(_levenshtein_codes(ca, cb))
