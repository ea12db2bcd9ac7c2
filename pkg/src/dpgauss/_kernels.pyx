# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled pairwise scoring kernels.

Both the spectral and Euclidean kernels visit every unordered pair once.
The spectral distance between A_i and A_j is computed from the extreme
eigenvalues of L_j^{-1} A_i L_j^{-T}, where A_j = L_j L_j^T, which share
their spectrum with A_j^{-1/2} A_i A_j^{-1/2}.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef void _jacobi_extremes(double* a, int d, double* lo, double* hi) noexcept nogil:
    # Cyclic Jacobi on a symmetric d x d row-major buffer (overwritten).
    cdef int sweep, p, q, r
    cdef double off, scale, app, aqq, apq, theta, t, c, s, tau, arp, arq
    for sweep in range(64):
        off = 0.0
        scale = 0.0
        for p in range(d):
            scale += a[p * d + p] * a[p * d + p]
            for q in range(p + 1, d):
                off += a[p * d + q] * a[p * d + q]
        if off <= 1e-30 * scale or off == 0.0:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p * d + q]
                if apq == 0.0:
                    continue
                app = a[p * d + p]
                aqq = a[q * d + q]
                theta = (aqq - app) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + sqrt(1.0 + theta * theta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                tau = s / (1.0 + c)
                a[p * d + p] = app - t * apq
                a[q * d + q] = aqq + t * apq
                a[p * d + q] = 0.0
                a[q * d + p] = 0.0
                for r in range(d):
                    if r == p or r == q:
                        continue
                    arp = a[r * d + p]
                    arq = a[r * d + q]
                    a[r * d + p] = arp - s * (arq + tau * arp)
                    a[p * d + r] = a[r * d + p]
                    a[r * d + q] = arq + s * (arp - tau * arq)
                    a[q * d + r] = a[r * d + q]
    lo[0] = a[0]
    hi[0] = a[0]
    for p in range(1, d):
        if a[p * d + p] < lo[0]:
            lo[0] = a[p * d + p]
        if a[p * d + p] > hi[0]:
            hi[0] = a[p * d + p]


cdef double _pair_dist(const double[:, :, ::1] mats, const double[:, :, ::1] linv,
                       int i, int j, int d, double* tmp, double* out) noexcept nogil:
    cdef int a, b, c
    cdef double acc, lo, hi
    # tmp = Linv_j @ A_i
    for a in range(d):
        for b in range(d):
            acc = 0.0
            for c in range(a + 1):
                acc += linv[j, a, c] * mats[i, c, b]
            tmp[a * d + b] = acc
    # out = tmp @ Linv_j^T (symmetric; fill the lower triangle and mirror)
    for a in range(d):
        for b in range(a + 1):
            acc = 0.0
            for c in range(b + 1):
                acc += tmp[a * d + c] * linv[j, b, c]
            out[a * d + b] = acc
            out[b * d + a] = acc
    _jacobi_extremes(out, d, &lo, &hi)
    if lo <= 0.0:
        return INFINITY
    if hi - 1.0 > 1.0 / lo - 1.0:
        return hi - 1.0
    return 1.0 / lo - 1.0


def spectral_dist_matrix(const double[:, :, ::1] mats, const double[:, :, ::1] linv):
    cdef int k = mats.shape[0]
    cdef int d = mats.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] res = np.zeros((k, k))
    cdef double[:, ::1] out = res
    cdef int i, j
    cdef double v
    cdef double* tmp = <double*> malloc(2 * d * d * sizeof(double))
    if tmp == NULL:
        raise MemoryError()
    try:
        with nogil:
            for i in range(k):
                for j in range(i + 1, k):
                    v = _pair_dist(mats, linv, i, j, d, tmp, tmp + d * d)
                    out[i, j] = v
                    out[j, i] = v
    finally:
        free(tmp)
    return res


def spectral_within_counts(const double[:, :, ::1] mats, const double[:, :, ::1] linv,
                           double radius):
    cdef int k = mats.shape[0]
    cdef int d = mats.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] res = np.ones(k, dtype=np.int64)
    cdef cnp.int64_t[::1] counts = res
    cdef int i, j
    cdef double* tmp = <double*> malloc(2 * d * d * sizeof(double))
    if tmp == NULL:
        raise MemoryError()
    try:
        with nogil:
            for i in range(k):
                for j in range(i + 1, k):
                    if _pair_dist(mats, linv, i, j, d, tmp, tmp + d * d) <= radius:
                        counts[i] += 1
                        counts[j] += 1
    finally:
        free(tmp)
    return res


def euclid_within_counts(const double[:, ::1] points, double radius):
    cdef int k = points.shape[0]
    cdef int p = points.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] res = np.ones(k, dtype=np.int64)
    cdef cnp.int64_t[::1] counts = res
    cdef int i, j, c
    cdef double acc, diff, r2 = radius * radius
    with nogil:
        for i in range(k):
            for j in range(i + 1, k):
                acc = 0.0
                for c in range(p):
                    diff = points[i, c] - points[j, c]
                    acc += diff * diff
                if acc <= r2:
                    counts[i] += 1
                    counts[j] += 1
    return res
