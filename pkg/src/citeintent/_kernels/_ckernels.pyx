# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops; signatures mirror ``_pykernels`` exactly."""
import numpy as np

from libc.math cimport sqrt, NAN


def tokenize_words(str text, stopwords, Py_ssize_t min_len):
    cdef str lowered = text.lower()
    cdef Py_ssize_t n = len(lowered)
    cdef Py_ssize_t i = 0, start
    cdef Py_UCS4 ch
    cdef list out = []
    cdef str tok
    while i < n:
        ch = lowered[i]
        if not ch.isalpha():
            i += 1
            continue
        start = i
        while i < n:
            ch = lowered[i]
            if not ch.isalpha():
                break
            i += 1
        if i - start >= min_len:
            tok = lowered[start:i]
            if tok not in stopwords:
                out.append(tok)
    return out


def cosine_scores(anchor, matrix):
    cdef const double[::1] a = np.ascontiguousarray(anchor, dtype=np.float64)
    cdef const double[:, ::1] m = np.ascontiguousarray(matrix, dtype=np.float64)
    cdef Py_ssize_t n = m.shape[0], d = m.shape[1], i, j
    if a.shape[0] != d:
        raise ValueError(f"dimension mismatch: anchor {a.shape[0]} vs candidates {d}")
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double an = 0.0, dot, rn
    for j in range(d):
        an += a[j] * a[j]
    an = sqrt(an)
    for i in range(n):
        dot = 0.0
        rn = 0.0
        for j in range(d):
            dot += a[j] * m[i, j]
            rn += m[i, j] * m[i, j]
        if rn == 0.0 or an == 0.0:
            o[i] = NAN
        else:
            o[i] = dot / (an * sqrt(rn))
    return out


def label_scores(probs, ids, weights, label_of, Py_ssize_t n_labels):
    cdef const double[:, ::1] p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef const long long[::1] idx = np.ascontiguousarray(ids, dtype=np.int64)
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef const long long[::1] lab = np.ascontiguousarray(label_of, dtype=np.int64)
    cdef Py_ssize_t b = p.shape[0], nw = idx.shape[0], r, k
    out = np.zeros((b, n_labels), dtype=np.float64)
    cdef double[:, ::1] o = out
    for r in range(b):
        for k in range(nw):
            if idx[k] >= 0:
                o[r, lab[k]] += w[k] * p[r, idx[k]]
    return out


def confusion_counts(gold, pred, Py_ssize_t n):
    cdef const long long[::1] g = np.ascontiguousarray(gold, dtype=np.int64)
    cdef const long long[::1] q = np.ascontiguousarray(pred, dtype=np.int64)
    if g.shape[0] != q.shape[0]:
        raise ValueError("gold and predicted sequences differ in length")
    out = np.zeros((n, n), dtype=np.int64)
    cdef long long[:, ::1] o = out
    cdef Py_ssize_t i
    for i in range(g.shape[0]):
        if g[i] < 0 or g[i] >= n or q[i] < 0 or q[i] >= n:
            raise ValueError(f"label index out of range at position {i}")
        o[g[i], q[i]] += 1
    return out
