"""Numpy implementations of the hot raster kernels.

Same signatures and semantics as the compiled backend; selected at import
when the extension is unavailable.
"""

from __future__ import annotations

import numpy as np


def binary_erode(mask: np.ndarray, dy: np.ndarray, dx: np.ndarray) -> np.ndarray:
    """Erosion with out-of-bounds treated as background."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    ry = int(np.abs(dy).max(initial=0))
    rx = int(np.abs(dx).max(initial=0))
    padded = np.zeros((h + 2 * ry, w + 2 * rx), dtype=bool)
    padded[ry : ry + h, rx : rx + w] = mask
    out = np.ones((h, w), dtype=bool)
    for oy, ox in zip(dy, dx):
        out &= padded[ry + oy : ry + oy + h, rx + ox : rx + ox + w]
    return out


def binary_dilate(mask: np.ndarray, dy: np.ndarray, dx: np.ndarray) -> np.ndarray:
    """Dilation: output p is set when some offset o has mask[p - o]."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    ry = int(np.abs(dy).max(initial=0))
    rx = int(np.abs(dx).max(initial=0))
    padded = np.zeros((h + 2 * ry, w + 2 * rx), dtype=bool)
    padded[ry : ry + h, rx : rx + w] = mask
    out = np.zeros((h, w), dtype=bool)
    for oy, ox in zip(dy, dx):
        out |= padded[ry - oy : ry - oy + h, rx - ox : rx - ox + w]
    return out


def _row_runs(row: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [x0, x1) runs of True values in a 1-D boolean row."""
    idx = np.flatnonzero(np.diff(np.concatenate(([False], row, [False]))))
    return list(zip(idx[0::2].tolist(), idx[1::2].tolist()))


def label_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connectivity labeling; labels are 1..count by first pixel, row-major.

    Works on row runs: runs inside a row are single provisional labels, runs in
    adjacent rows are unioned when they overlap or touch diagonally.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    parent: list[int] = []

    def find(a: int) -> int:
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    runs: list[tuple[int, int, int, int]] = []  # (row, x0, x1, provisional id)
    prev: list[tuple[int, int, int]] = []  # previous row: (x0, x1, id)
    for y in range(h):
        cur: list[tuple[int, int, int]] = []
        for x0, x1 in _row_runs(mask[y]):
            rid = len(parent)
            parent.append(rid)
            # 8-connectivity: diagonal contact widens the overlap test by 1
            for px0, px1, pid in prev:
                if px0 <= x1 and px1 >= x0:
                    union(rid, pid)
            runs.append((y, x0, x1, rid))
            cur.append((x0, x1, rid))
        prev = cur

    final: dict[int, int] = {}
    count = 0
    for y, x0, x1, rid in runs:
        root = find(rid)
        if root not in final:
            count += 1
            final[root] = count
        labels[y, x0:x1] = final[root]
    return labels, count


def convolve_sep_valid(padded: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable correlation, 'valid' extent: rows first, then columns.

    ``padded`` must carry (len(kernel) - 1) extra samples per axis. The kernel
    is applied unflipped (all callers use symmetric kernels).
    """
    padded = np.asarray(padded, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    flipped = kernel[::-1]

    def corr_rows(a: np.ndarray) -> np.ndarray:
        out = np.empty((a.shape[0], a.shape[1] - kernel.size + 1))
        for i in range(a.shape[0]):
            out[i] = np.convolve(a[i], flipped, mode="valid")
        return out

    tmp = corr_rows(padded)
    return np.ascontiguousarray(corr_rows(np.ascontiguousarray(tmp.T)).T)
