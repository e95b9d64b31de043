# cython: boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled scoring kernel: sparse-document vs dense-query cosine.

Twin of ``_kernel.py``; the accumulation order and arithmetic must stay
identical so both backends produce bit-identical scores.
"""

from array import array

BACKEND = "cython"


def score_many(offsets, term_ids, weights, norms, query_vec, query_norm):
    cdef long[::1] off = offsets
    cdef int[::1] tid = term_ids
    cdef double[::1] w = weights
    cdef double[::1] nrm = norms
    cdef double[::1] qv = query_vec
    cdef double qn = query_norm

    cdef Py_ssize_t n_docs = off.shape[0] - 1
    out = array("d", bytes(8 * n_docs))
    cdef double[::1] res = out

    cdef Py_ssize_t d, j
    cdef double dot
    with nogil:
        for d in range(n_docs):
            dot = 0.0
            for j in range(off[d], off[d + 1]):
                dot += qv[tid[j]] * w[j]
            if dot != 0.0:
                res[d] = dot / (nrm[d] * qn)
    return out
