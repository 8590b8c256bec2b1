# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Must agree with ``mvnad._fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt
from libc.stdint cimport uint32_t, uint64_t, int32_t, int64_t

cnp.import_array()

cdef uint64_t PCG_MULT = 6364136223846793005ULL


cdef inline uint32_t _pcg_out(uint64_t old) nogil:
    cdef uint32_t xorshifted = <uint32_t>(((old >> 18) ^ old) >> 27)
    cdef uint32_t rot = <uint32_t>(old >> 59)
    return (xorshifted >> rot) | (xorshifted << ((32 - rot) & 31))


def pcg32_fill(state, inc, Py_ssize_t n):
    cdef uint64_t s = <uint64_t>int(state)
    cdef uint64_t c = <uint64_t>int(inc)
    cdef cnp.ndarray[cnp.uint32_t, ndim=1] out = np.empty(n, dtype=np.uint32)
    cdef uint32_t[::1] view = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            view[i] = _pcg_out(s)
            s = s * PCG_MULT + c
    return out, int(s)


cdef int64_t _find(int64_t[::1] parent, int64_t a) nogil:
    cdef int64_t root = a
    cdef int64_t nxt
    while parent[root] != root:
        root = parent[root]
    while parent[a] != root:
        nxt = parent[a]
        parent[a] = root
        a = nxt
    return root


cdef inline void _union(int64_t[::1] parent, int64_t a, int64_t b) nogil:
    a = _find(parent, a)
    b = _find(parent, b)
    if a < b:
        parent[b] = a
    elif b < a:
        parent[a] = b


def label_components(mask):
    cdef cnp.uint8_t[:, ::1] m = np.ascontiguousarray(np.asarray(mask, dtype=bool), dtype=np.uint8)
    cdef Py_ssize_t h = m.shape[0], w = m.shape[1]
    cdef int64_t[:, ::1] prov = np.zeros((h, w), dtype=np.int64)
    parent_arr = np.zeros(h * w + 1, dtype=np.int64)
    cdef int64_t[::1] parent = parent_arr
    cdef int64_t next_label = 1, lab
    cdef Py_ssize_t r, c, dc, cc
    labels_arr = np.zeros((h, w), dtype=np.int32)
    cdef int32_t[:, ::1] labels = labels_arr
    remap_arr = np.zeros(h * w + 1, dtype=np.int32)
    cdef int32_t[::1] remap = remap_arr
    cdef int32_t count = 0
    with nogil:
        for r in range(h):
            for c in range(w):
                if not m[r, c]:
                    continue
                lab = 0
                if c > 0 and prov[r, c - 1]:
                    lab = prov[r, c - 1]
                if r > 0:
                    for dc in range(-1, 2):
                        cc = c + dc
                        if cc >= 0 and cc < w and prov[r - 1, cc]:
                            if lab == 0:
                                lab = prov[r - 1, cc]
                            else:
                                _union(parent, lab, prov[r - 1, cc])
                if lab == 0:
                    parent[next_label] = next_label
                    lab = next_label
                    next_label += 1
                prov[r, c] = lab
        for r in range(h):
            for c in range(w):
                if prov[r, c]:
                    lab = _find(parent, prov[r, c])
                    if remap[lab] == 0:
                        count += 1
                        remap[lab] = count
                    labels[r, c] = remap[lab]
    return labels_arr, int(count)


cdef int _solve3(double* a, double* b, double* x) nogil:
    # Cholesky of symmetric 3x3 a (row-major), solve a x = b
    cdef double l00, l10, l11, l20, l21, l22, y0, y1, y2, d
    d = a[0]
    if d <= 0:
        return -1
    l00 = sqrt(d)
    l10 = a[3] / l00
    l20 = a[6] / l00
    d = a[4] - l10 * l10
    if d <= 0:
        return -1
    l11 = sqrt(d)
    l21 = (a[7] - l20 * l10) / l11
    d = a[8] - l20 * l20 - l21 * l21
    if d <= 0:
        return -1
    l22 = sqrt(d)
    y0 = b[0] / l00
    y1 = (b[1] - l10 * y0) / l11
    y2 = (b[2] - l20 * y0 - l21 * y1) / l22
    x[2] = y2 / l22
    x[1] = (y1 - l21 * x[2]) / l11
    x[0] = (y0 - l10 * x[1] - l20 * x[2]) / l00
    return 0


def ps_solve(lights, intensities, int trim):
    cdef double[:, ::1] L = np.ascontiguousarray(lights, dtype=np.float64)
    cdef double[:, ::1] I = np.ascontiguousarray(intensities, dtype=np.float64)
    cdef Py_ssize_t k = L.shape[0], npix = I.shape[1]
    g_arr = np.empty((npix, 3), dtype=np.float64)
    r_arr = np.empty(npix, dtype=np.float64)
    cdef double[:, ::1] g = g_arr
    cdef double[::1] res = r_arr
    cdef double a[9]
    cdef double b[3]
    cdef double x[3]
    cdef double v, e, acc
    cdef Py_ssize_t p, i, u, w, drop
    cdef int status = 0
    with nogil:
        for p in range(npix):
            drop = -1
            if trim:
                drop = 0
                for i in range(1, k):
                    if I[i, p] < I[drop, p]:
                        drop = i
            for u in range(9):
                a[u] = 0.0
            for u in range(3):
                b[u] = 0.0
            for i in range(k):
                if i == drop:
                    continue
                v = I[i, p]
                for u in range(3):
                    b[u] += L[i, u] * v
                    for w in range(3):
                        a[3 * u + w] += L[i, u] * L[i, w]
            if _solve3(a, b, x) != 0:
                status = -1
                break
            acc = 0.0
            for i in range(k):
                if i == drop:
                    continue
                e = L[i, 0] * x[0] + L[i, 1] * x[1] + L[i, 2] * x[2] - I[i, p]
                acc += e * e
            g[p, 0] = x[0]
            g[p, 1] = x[1]
            g[p, 2] = x[2]
            res[p] = sqrt(acc)
    if status != 0:
        raise np.linalg.LinAlgError("light matrix not positive definite")
    return g_arr, r_arr
