# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Must agree bit-for-bit with ``_fallback``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def pair_sqdist(const double[:, ::1] x):
    """Condensed squared Euclidean distances, pairs (i, j), i < j, row-major."""
    cdef Py_ssize_t m = x.shape[0], p = x.shape[1]
    cdef Py_ssize_t i, j, k, t = 0
    cdef double acc, diff
    out = np.empty(m * (m - 1) // 2, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(m):
        for j in range(i + 1, m):
            acc = 0.0
            for k in range(p):
                diff = x[i, k] - x[j, k]
                acc = acc + diff * diff
            o[t] = acc
            t += 1
    return out


def greedy_scan(const cnp.int64_t[::1] order, Py_ssize_t m):
    """Walk condensed pair indices in ``order``; keep pairs with both ends free."""
    cdef cnp.int64_t[::1] row_start = np.empty(m, dtype=np.int64)
    cdef Py_ssize_t i, t, lo, hi, mid, a, b, got = 0, npairs = m // 2
    cdef cnp.int64_t idx
    for i in range(m):
        row_start[i] = i * m - i * (i + 1) // 2
    used = np.zeros(m, dtype=np.uint8)
    cdef unsigned char[::1] u = used
    pairs = np.empty((npairs, 2), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] pr = pairs
    for t in range(order.shape[0]):
        if got == npairs:
            break
        idx = order[t]
        # locate row a with row_start[a] <= idx < row_start[a + 1]
        lo = 0
        hi = m - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if row_start[mid] <= idx:
                lo = mid
            else:
                hi = mid - 1
        a = lo
        b = a + 1 + (idx - row_start[a])
        if u[a] or u[b]:
            continue
        u[a] = 1
        u[b] = 1
        pr[got, 0] = a
        pr[got, 1] = b
        got += 1
    return pairs


def block_max_sqdist(const double[:, ::1] x, const cnp.int64_t[:, ::1] left,
                     const cnp.int64_t[:, ::1] right):
    """Per row r: max squared distance between units left[r, :] and right[r, :]."""
    cdef Py_ssize_t n = left.shape[0], s1 = left.shape[1], s2 = right.shape[1]
    cdef Py_ssize_t p = x.shape[1], r, a, b, k
    cdef double acc, diff, best
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] o = out
    for r in range(n):
        best = 0.0
        for a in range(s1):
            for b in range(s2):
                acc = 0.0
                for k in range(p):
                    diff = x[left[r, a], k] - x[right[r, b], k]
                    acc = acc + diff * diff
                if acc > best:
                    best = acc
        o[r] = best
    return out
