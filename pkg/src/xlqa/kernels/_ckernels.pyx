# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the inner loops in :mod:`xlqa.kernels._pykernels`.

Loop order and floating-point operation order match the Python versions
exactly, so both backends produce bit-identical results.
"""
from libc.math cimport log


def ibm1_estep(const long long[::1] pair_ids, const long long[::1] offsets,
               const long long[::1] src_lens, const long long[::1] tgt_lens,
               const double[::1] probs, double[::1] counts):
    cdef Py_ssize_t k, i, j, base
    cdef long long ls, lt
    cdef double denom, ll = 0.0
    cdef Py_ssize_t npairs = offsets.shape[0]
    for k in range(npairs):
        ls = src_lens[k]
        lt = tgt_lens[k]
        for j in range(lt):
            base = offsets[k] + j * ls
            denom = 0.0
            for i in range(ls):
                denom = denom + probs[pair_ids[base + i]]
            if denom > 0.0:
                ll = ll + (log(denom) - log(<double>ls))
                for i in range(ls):
                    counts[pair_ids[base + i]] += probs[pair_ids[base + i]] / denom
    return ll


def best_span(const double[::1] start_scores, const double[::1] end_scores, long long max_len):
    cdef Py_ssize_t n = start_scores.shape[0]
    cdef Py_ssize_t s, e, stop
    cdef Py_ssize_t bs = -1, be = -1
    cdef double best = 0.0, score
    for s in range(n):
        stop = s + max_len + 1
        if stop > n:
            stop = n
        for e in range(s, stop):
            score = start_scores[s] + end_scores[e]
            if bs < 0 or score > best:
                best = score
                bs = s
                be = e
    return bs, be, best
