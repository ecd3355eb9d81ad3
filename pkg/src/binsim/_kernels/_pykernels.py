"""Pure-Python twins of the compiled kernels.

These follow ``_ckernels.pyx`` statement for statement, including the order
of floating-point operations, so both backends return identical bits.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

_MASK = (1 << 64) - 1
_LCG_MUL = 25214903917
_LCG_ADD = 11
_EXP_CLIP = 50.0


def _softplus(x: float) -> float:
    m = x if x > 0.0 else 0.0
    return m + math.log1p(math.exp(-abs(x)))


def sgns_epoch(
    corpus, offsets, syn0, syn1, table, keep,
    window, negative, alpha0, min_alpha, words_done, total_words, seed,
):
    corpus = corpus.tolist()
    offsets = offsets.tolist()
    table = table.tolist()
    keep = keep.tolist()
    subsample = len(keep) > 0
    table_size = len(table)
    w0 = syn0.tolist()
    w1 = syn1.tolist()
    dim = syn0.shape[1]
    rnd = int(seed) & _MASK
    loss = 0.0
    pairs = 0
    rng_dim = range(dim)

    for s in range(len(offsets) - 1):
        alpha = alpha0 * (1.0 - float(words_done) / float(total_words + 1))
        if alpha < min_alpha:
            alpha = min_alpha
        sen = []
        for i in range(offsets[s], offsets[s + 1]):
            w = corpus[i]
            if subsample:
                rnd = (rnd * _LCG_MUL + _LCG_ADD) & _MASK
                ran = float(rnd & 0xFFFF) / 65536.0
                if keep[w] < ran:
                    continue
            sen.append(w)
        words_done += offsets[s + 1] - offsets[s]
        L = len(sen)

        for pos in range(L):
            center = sen[pos]
            rnd = (rnd * _LCG_MUL + _LCG_ADD) & _MASK
            b = rnd % window
            l1 = w0[center]
            for c in range(pos - (window - b), pos + (window - b) + 1):
                if c == pos or c < 0 or c >= L:
                    continue
                ctx = sen[c]
                neu1e = [0.0] * dim
                for d in range(negative + 1):
                    if d == 0:
                        target = ctx
                        label = 1.0
                    else:
                        rnd = (rnd * _LCG_MUL + _LCG_ADD) & _MASK
                        target = table[(rnd >> 16) % table_size]
                        if target == ctx:
                            continue
                        label = 0.0
                    s1 = w1[target]
                    f = 0.0
                    for k in rng_dim:
                        f = f + l1[k] * s1[k]
                    if f > _EXP_CLIP:
                        f = _EXP_CLIP
                    elif f < -_EXP_CLIP:
                        f = -_EXP_CLIP
                    sig = 1.0 / (1.0 + math.exp(-f))
                    if d == 0:
                        loss = loss + _softplus(-f)
                    else:
                        loss = loss + _softplus(f)
                    g = (label - sig) * alpha
                    for k in rng_dim:
                        neu1e[k] = neu1e[k] + g * s1[k]
                    for k in rng_dim:
                        s1[k] = s1[k] + g * l1[k]
                for k in rng_dim:
                    l1[k] = l1[k] + neu1e[k]
                pairs += 1

    syn0[...] = np.asarray(w0, dtype=np.float64).reshape(syn0.shape)
    syn1[...] = np.asarray(w1, dtype=np.float64).reshape(syn1.shape)
    return rnd, loss, pairs, words_done


def brandes(n, indptr, indices, rindptr, rindices, exact: bool = False):
    """Unnormalized directed betweenness (see ``_ckernels.brandes``).

    With ``exact=True`` path counts are integers and dependencies are
    :class:`fractions.Fraction`, returning exact rationals.
    """
    indptr, indices = list(indptr), list(indices)
    rindptr, rindices = list(rindptr), list(rindices)
    zero = Fraction(0) if exact else 0.0
    one = Fraction(1) if exact else 1.0
    bc = [zero] * n
    for s in range(n):
        sigma = [0 if exact else 0.0] * n
        delta = [zero] * n
        dist = [-1] * n
        sigma[s] = 1 if exact else 1.0
        dist[s] = 0
        order = [s]
        head = 0
        while head < len(order):
            v = order[head]
            head += 1
            for idx in range(indptr[v], indptr[v + 1]):
                w = indices[idx]
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    order.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] = sigma[w] + sigma[v]
        for i in range(len(order) - 1, -1, -1):
            w = order[i]
            for idx in range(rindptr[w], rindptr[w + 1]):
                v = rindices[idx]
                if dist[v] >= 0 and dist[v] == dist[w] - 1:
                    ratio = Fraction(sigma[v], sigma[w]) if exact else sigma[v] / sigma[w]
                    delta[v] = delta[v] + ratio * (one + delta[w])
            if w != s:
                bc[w] = bc[w] + delta[w]
    if exact:
        return bc
    return np.asarray(bc, dtype=np.float64)
