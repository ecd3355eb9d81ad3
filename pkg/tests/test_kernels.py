"""The compiled and pure-Python kernels must agree bit for bit."""

import os
import subprocess
import sys

import numpy as np
import pytest

from binsim import _kernels
from binsim._kernels import python as py

compiled = getattr(_kernels, "compiled", None)
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


def _sgns_inputs(seed, vocab=40, dim=8, sentences=30):
    rng = np.random.default_rng(seed)
    lens = rng.integers(0, 25, size=sentences)
    corpus = rng.integers(1, vocab, size=int(lens.sum())).astype(np.int32)
    offsets = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
    syn0 = (rng.random((vocab, dim)) - 0.5) / dim
    syn0[0] = 0.0
    syn1 = rng.normal(0, 0.1, (vocab, dim))
    table = rng.integers(1, vocab, size=1000).astype(np.int32)
    return corpus, offsets, syn0, syn1, table


@needs_compiled
@pytest.mark.parametrize("subsample", [False, True])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_sgns_epoch_parity(seed, subsample):
    corpus, offsets, syn0, syn1, table = _sgns_inputs(seed)
    keep = np.random.default_rng(seed).random(40) if subsample else np.zeros(0)
    args = (5, 5, 0.025, 0.025e-4, 0, int(offsets[-1]) * 2, 12345 + seed)
    a0, a1 = syn0.copy(), syn1.copy()
    b0, b1 = syn0.copy(), syn1.copy()
    ra = compiled.sgns_epoch(corpus, offsets, a0, a1, table, keep, *args)
    rb = py.sgns_epoch(corpus, offsets, b0, b1, table, keep, *args)
    assert ra == rb
    assert np.array_equal(a0, b0) and np.array_equal(a1, b1)
    assert not a0[0].any()


@needs_compiled
@pytest.mark.parametrize("seed", range(20))
def test_brandes_parity(seed):
    from binsim.features import _csr
    from helpers import random_cfg

    cfg = random_cfg(np.random.default_rng(seed), max_vertices=12, edge_p=0.25)
    n, (p, i), (rp, ri) = _csr(cfg)
    assert np.array_equal(compiled.brandes(n, p, i, rp, ri), np.asarray(py.brandes(n, p, i, rp, ri)))


def test_backend_flag():
    assert _kernels.BACKEND in ("cython", "python")
    if compiled is not None:
        assert _kernels.BACKEND == "cython"


def test_pure_python_override():
    env = dict(os.environ, BINSIM_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import binsim._kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
