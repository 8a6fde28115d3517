# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: all-pairs substitution counts and the NJ loop.

Mirrors ``gdrec._pykernels`` exactly in contract and tie-breaking.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, isfinite

cnp.import_array()

cdef double TIE_RTOL = 1e-12


def pair_counts_all(codes, weights):
    cdef const signed char[:, ::1] x = np.ascontiguousarray(codes, dtype=np.int8)
    cdef const long long[::1] w = np.ascontiguousarray(weights, dtype=np.int64)
    cdef Py_ssize_t n = x.shape[0], s = x.shape[1]
    out_arr = np.zeros((n, n, 8), dtype=np.int64)
    cdef long long[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, k, a, b
    cdef const signed char* xi
    cdef const signed char* xj
    # joint[a * 6 + b]: weighted count of sites with codes (a, b)
    cdef long long joint[36]
    cdef long long comp, same
    for i in range(n):
        xi = &x[i, 0]
        for j in range(i, n):
            xj = &x[j, 0]
            for k in range(36):
                joint[k] = 0
            for k in range(s):
                joint[xi[k] * 6 + xj[k]] += w[k]
            comp = 0
            same = 0
            for a in range(4):
                out[i, j, 4 + a] = 0
            for a in range(4):
                for b in range(4):
                    comp += joint[a * 6 + b]
                    out[i, j, 4 + a] += joint[a * 6 + b]
                    out[i, j, 4 + b] += joint[a * 6 + b]
                same += joint[a * 7]
            out[i, j, 0] = comp
            out[i, j, 1] = joint[0 * 6 + 2] + joint[2 * 6 + 0]
            out[i, j, 2] = joint[1 * 6 + 3] + joint[3 * 6 + 1]
            out[i, j, 3] = comp - same - out[i, j, 1] - out[i, j, 2]
            if i != j:
                for k in range(8):
                    out[j, i, k] = out[i, j, k]
    return out_arr


def nj_joins(dist):
    cdef double[:, :] d = np.array(dist, dtype=np.float64, copy=True)
    cdef Py_ssize_t n = d.shape[0]
    slots_arr = np.arange(n, dtype=np.intp)
    node_arr = np.arange(n, dtype=np.intp)
    r_arr = np.zeros(n, dtype=np.float64)
    cdef Py_ssize_t[:] slots = slots_arr
    cdef Py_ssize_t[:] node_of = node_arr
    cdef double[:] r = r_arr
    cdef Py_ssize_t m = n, i, j, k, si, sj, bi = 0, bj = 0
    cdef Py_ssize_t next_id = n
    cdef double q, qmin, tol, dij, li, lj, v
    joins = []
    warnings = []
    while m > 2:
        for i in range(m):
            v = 0.0
            si = slots[i]
            for k in range(m):
                v += d[si, slots[k]]
            r[i] = v
        qmin = 0.0
        for i in range(m):
            for j in range(i + 1, m):
                q = (m - 2) * d[slots[i], slots[j]] - r[i] - r[j]
                if (i == 0 and j == 1) or q < qmin:
                    qmin = q
        if not isfinite(qmin):
            raise FloatingPointError("non-finite Q value")
        tol = TIE_RTOL * max(1.0, fabs(qmin))
        bi = -1
        for i in range(m):
            for j in range(i + 1, m):
                q = (m - 2) * d[slots[i], slots[j]] - r[i] - r[j]
                if q <= qmin + tol:
                    bi = i
                    bj = j
                    break
            if bi >= 0:
                break
        si = slots[bi]
        sj = slots[bj]
        dij = d[si, sj]
        li = 0.5 * dij + (r[bi] - r[bj]) / (2.0 * (m - 2))
        lj = dij - li
        a = node_of[si]
        b = node_of[sj]
        if li < 0.0:
            warnings.append((a, b, li))
            li = 0.0
            lj = dij
        elif lj < 0.0:
            warnings.append((b, a, lj))
            li = dij
            lj = 0.0
        for k in range(n):
            v = 0.5 * (d[si, k] + d[sj, k] - dij)
            d[si, k] = v
            d[k, si] = v
        d[si, si] = 0.0
        joins.append((a, b, next_id, li, lj))
        node_of[si] = next_id
        next_id += 1
        for k in range(bj, m - 1):
            slots[k] = slots[k + 1]
        m -= 1
    a = node_of[slots[0]]
    b = node_of[slots[1]]
    v = d[slots[0], slots[1]]
    if v < 0.0:
        warnings.append((a, b, v))
        v = 0.0
    return joins, (a, b, v), warnings
