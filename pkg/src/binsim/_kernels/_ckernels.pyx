# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: skip-gram negative-sampling SGD and Brandes betweenness.

Every floating-point operation here is performed in the same order as in
``_pykernels`` so that both backends produce bit-identical output (the
extension is built with ``-ffp-contract=off`` and without fast-math).
"""

from libc.math cimport exp, log1p, fabs
from libc.stdlib cimport malloc, free
from libc.stdint cimport uint64_t, int64_t, int32_t

import numpy as np

cdef uint64_t LCG_MUL = 25214903917ULL
cdef uint64_t LCG_ADD = 11ULL
cdef double EXP_CLIP = 50.0


cdef inline double _clip(double f) noexcept nogil:
    if f > EXP_CLIP:
        return EXP_CLIP
    if f < -EXP_CLIP:
        return -EXP_CLIP
    return f


cdef inline double _softplus(double x) noexcept nogil:
    cdef double m = x if x > 0.0 else 0.0
    return m + log1p(exp(-fabs(x)))


def sgns_epoch(
    const int32_t[::1] corpus,
    const int64_t[::1] offsets,
    double[:, ::1] syn0,
    double[:, ::1] syn1,
    const int32_t[::1] table,
    const double[::1] keep,
    int window,
    int negative,
    double alpha0,
    double min_alpha,
    int64_t words_done,
    int64_t total_words,
    uint64_t seed,
):
    """One pass of skip-gram negative-sampling SGD over ``corpus``.

    Returns ``(rng_state, loss_sum, n_pairs, words_done)``.
    """
    cdef Py_ssize_t n_sent = offsets.shape[0] - 1
    cdef Py_ssize_t dim = syn0.shape[1]
    cdef Py_ssize_t table_size = table.shape[0]
    cdef bint subsample = keep.shape[0] > 0
    cdef uint64_t rnd = seed
    cdef double loss = 0.0
    cdef int64_t pairs = 0
    cdef Py_ssize_t max_len = 0
    cdef Py_ssize_t s, i, j, L, pos, c, d, k, b
    cdef int32_t w, center, ctx, target
    cdef double alpha, f, g, label, sig, ran
    cdef double *neu1e
    cdef int32_t *sen

    for s in range(n_sent):
        if offsets[s + 1] - offsets[s] > max_len:
            max_len = offsets[s + 1] - offsets[s]
    sen = <int32_t *> malloc((max_len + 1) * sizeof(int32_t))
    neu1e = <double *> malloc((dim + 1) * sizeof(double))
    if sen == NULL or neu1e == NULL:
        free(sen)
        free(neu1e)
        raise MemoryError()

    with nogil:
        for s in range(n_sent):
            alpha = alpha0 * (1.0 - <double> words_done / <double> (total_words + 1))
            if alpha < min_alpha:
                alpha = min_alpha
            L = 0
            for i in range(offsets[s], offsets[s + 1]):
                w = corpus[i]
                if subsample:
                    rnd = rnd * LCG_MUL + LCG_ADD
                    ran = <double> (rnd & 0xFFFF) / 65536.0
                    if keep[w] < ran:
                        continue
                sen[L] = w
                L += 1
            words_done += offsets[s + 1] - offsets[s]

            for pos in range(L):
                center = sen[pos]
                rnd = rnd * LCG_MUL + LCG_ADD
                b = <Py_ssize_t> (rnd % <uint64_t> window)
                for c in range(pos - (window - b), pos + (window - b) + 1):
                    if c == pos or c < 0 or c >= L:
                        continue
                    ctx = sen[c]
                    for k in range(dim):
                        neu1e[k] = 0.0
                    for d in range(negative + 1):
                        if d == 0:
                            target = ctx
                            label = 1.0
                        else:
                            rnd = rnd * LCG_MUL + LCG_ADD
                            target = table[(rnd >> 16) % <uint64_t> table_size]
                            if target == ctx:
                                continue
                            label = 0.0
                        f = 0.0
                        for k in range(dim):
                            f = f + syn0[center, k] * syn1[target, k]
                        f = _clip(f)
                        sig = 1.0 / (1.0 + exp(-f))
                        if d == 0:
                            loss = loss + _softplus(-f)
                        else:
                            loss = loss + _softplus(f)
                        g = (label - sig) * alpha
                        for k in range(dim):
                            neu1e[k] = neu1e[k] + g * syn1[target, k]
                        for k in range(dim):
                            syn1[target, k] = syn1[target, k] + g * syn0[center, k]
                    for k in range(dim):
                        syn0[center, k] = syn0[center, k] + neu1e[k]
                    pairs += 1

    free(sen)
    free(neu1e)
    return rnd, loss, pairs, words_done


def brandes(
    Py_ssize_t n,
    const int64_t[::1] indptr,
    const int32_t[::1] indices,
    const int64_t[::1] rindptr,
    const int32_t[::1] rindices,
):
    """Unnormalized directed betweenness for an unweighted graph in CSR form.

    ``indptr/indices`` list successors, ``rindptr/rindices`` predecessors;
    both must be free of duplicates and self-loops.
    """
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] bc = out
    if n == 0:
        return out
    cdef double *sigma = <double *> malloc(n * sizeof(double))
    cdef double *delta = <double *> malloc(n * sizeof(double))
    cdef int64_t *dist = <int64_t *> malloc(n * sizeof(int64_t))
    cdef int32_t *order = <int32_t *> malloc(n * sizeof(int32_t))
    cdef Py_ssize_t s, v, w, head, tail, idx, i
    if sigma == NULL or delta == NULL or dist == NULL or order == NULL:
        free(sigma); free(delta); free(dist); free(order)
        raise MemoryError()

    with nogil:
        for s in range(n):
            for i in range(n):
                sigma[i] = 0.0
                delta[i] = 0.0
                dist[i] = -1
            sigma[s] = 1.0
            dist[s] = 0
            order[0] = <int32_t> s
            head = 0
            tail = 1
            while head < tail:
                v = order[head]
                head += 1
                for idx in range(indptr[v], indptr[v + 1]):
                    w = indices[idx]
                    if dist[w] < 0:
                        dist[w] = dist[v] + 1
                        order[tail] = <int32_t> w
                        tail += 1
                    if dist[w] == dist[v] + 1:
                        sigma[w] = sigma[w] + sigma[v]
            for i in range(tail - 1, -1, -1):
                w = order[i]
                for idx in range(rindptr[w], rindptr[w + 1]):
                    v = rindices[idx]
                    if dist[v] >= 0 and dist[v] == dist[w] - 1:
                        delta[v] = delta[v] + (sigma[v] / sigma[w]) * (1.0 + delta[w])
                if w != s:
                    bc[w] = bc[w] + delta[w]

    free(sigma); free(delta); free(dist); free(order)
    return out
