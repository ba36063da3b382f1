# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled raster kernels: binary morphology, labeling, separable convolution."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def binary_erode(object mask_in, object dy_in, object dx_in):
    """Erosion with out-of-bounds treated as background."""
    cdef const cnp.uint8_t[:, ::1] mask = np.ascontiguousarray(
        np.asarray(mask_in, dtype=bool).view(np.uint8))
    cdef const cnp.int32_t[::1] dy = np.ascontiguousarray(np.asarray(dy_in, dtype=np.int32))
    cdef const cnp.int32_t[::1] dx = np.ascontiguousarray(np.asarray(dx_in, dtype=np.int32))
    cdef Py_ssize_t h = mask.shape[0], w = mask.shape[1], n = dy.shape[0]
    out_arr = np.zeros((h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, t, y, x
    cdef bint keep
    for i in range(h):
        for j in range(w):
            keep = True
            for t in range(n):
                y = i + dy[t]
                x = j + dx[t]
                if y < 0 or y >= h or x < 0 or x >= w or mask[y, x] == 0:
                    keep = False
                    break
            out[i, j] = keep
    return out_arr.view(np.bool_)


def binary_dilate(object mask_in, object dy_in, object dx_in):
    """Dilation: output p is set when some offset o has mask[p - o]."""
    cdef const cnp.uint8_t[:, ::1] mask = np.ascontiguousarray(
        np.asarray(mask_in, dtype=bool).view(np.uint8))
    cdef const cnp.int32_t[::1] dy = np.ascontiguousarray(np.asarray(dy_in, dtype=np.int32))
    cdef const cnp.int32_t[::1] dx = np.ascontiguousarray(np.asarray(dx_in, dtype=np.int32))
    cdef Py_ssize_t h = mask.shape[0], w = mask.shape[1], n = dy.shape[0]
    out_arr = np.zeros((h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, t, y, x
    cdef bint hit
    for i in range(h):
        for j in range(w):
            hit = False
            for t in range(n):
                y = i - dy[t]
                x = j - dx[t]
                if 0 <= y < h and 0 <= x < w and mask[y, x] != 0:
                    hit = True
                    break
            out[i, j] = hit
    return out_arr.view(np.bool_)


cdef inline cnp.int32_t _find(cnp.int32_t[::1] parent, cnp.int32_t a) noexcept nogil:
    cdef cnp.int32_t root = a, nxt
    while parent[root] != root:
        root = parent[root]
    while parent[a] != root:
        nxt = parent[a]
        parent[a] = root
        a = nxt
    return root


def label_components(object mask_in):
    """8-connectivity two-pass labeling; labels ordered by first pixel, row-major."""
    cdef const cnp.uint8_t[:, ::1] mask = np.ascontiguousarray(
        np.asarray(mask_in, dtype=bool).view(np.uint8))
    cdef Py_ssize_t h = mask.shape[0], w = mask.shape[1]
    labels_arr = np.zeros((h, w), dtype=np.int32)
    cdef cnp.int32_t[:, ::1] labels = labels_arr
    # at most one provisional label per 2 pixels in a row
    cdef Py_ssize_t cap = (h * w) // 2 + 2
    parent_arr = np.zeros(cap, dtype=np.int32)
    cdef cnp.int32_t[::1] parent = parent_arr
    cdef cnp.int32_t next_label = 1
    cdef cnp.int32_t best, cand, ra, rb
    cdef Py_ssize_t i, j, k, nj

    for i in range(h):
        for j in range(w):
            if mask[i, j] == 0:
                continue
            best = 0
            # neighbors already scanned: W, NW, N, NE
            if j > 0 and labels[i, j - 1] != 0:
                best = labels[i, j - 1]
            if i > 0:
                for k in range(3):
                    nj = j - 1 + k
                    if 0 <= nj < w and labels[i - 1, nj] != 0:
                        cand = labels[i - 1, nj]
                        if best == 0:
                            best = cand
                        elif cand != best:
                            ra = _find(parent, best)
                            rb = _find(parent, cand)
                            if ra != rb:
                                if ra < rb:
                                    parent[rb] = ra
                                else:
                                    parent[ra] = rb
                                    ra = rb
                            best = ra
            if best == 0:
                parent[next_label] = next_label
                best = next_label
                next_label += 1
            labels[i, j] = best

    remap_arr = np.zeros(next_label, dtype=np.int32)
    cdef cnp.int32_t[::1] remap = remap_arr
    cdef cnp.int32_t count = 0, root
    for i in range(h):
        for j in range(w):
            if labels[i, j] != 0:
                root = _find(parent, labels[i, j])
                if remap[root] == 0:
                    count += 1
                    remap[root] = count
                labels[i, j] = remap[root]
    return labels_arr, int(count)


def convolve_sep_valid(object padded_in, object kernel_in):
    """Separable correlation, 'valid' extent: rows first, then columns."""
    cdef const double[:, ::1] a = np.ascontiguousarray(padded_in, dtype=np.float64)
    cdef const double[::1] k = np.ascontiguousarray(kernel_in, dtype=np.float64)
    cdef Py_ssize_t m = k.shape[0]
    cdef Py_ssize_t ph = a.shape[0], pw = a.shape[1]
    cdef Py_ssize_t h = ph - m + 1, w = pw - m + 1
    tmp_arr = np.empty((ph, w), dtype=np.float64)
    out_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] tmp = tmp_arr
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, t
    cdef double acc
    for i in range(ph):
        for j in range(w):
            acc = 0.0
            for t in range(m):
                acc += a[i, j + t] * k[t]
            tmp[i, j] = acc
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for t in range(m):
                acc += tmp[i + t, j] * k[t]
            out[i, j] = acc
    return out_arr
