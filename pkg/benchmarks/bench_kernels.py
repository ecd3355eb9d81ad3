"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 3]

Both backends get identical inputs; the script also checks that their
outputs agree before reporting timings.
"""

import argparse
import time

import numpy as np

from binsim import _kernels
from binsim._kernels import python as py


def sgns_inputs(seed=0, vocab=300, dim=32, sentences=200):
    rng = np.random.default_rng(seed)
    lens = rng.integers(5, 60, size=sentences)
    corpus = rng.integers(1, vocab, size=int(lens.sum())).astype(np.int32)
    offsets = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
    syn0 = (rng.random((vocab, dim)) - 0.5) / dim
    syn0[0] = 0.0
    syn1 = np.zeros((vocab, dim))
    table = rng.integers(1, vocab, size=100_000).astype(np.int32)
    return corpus, offsets, syn0, syn1, table


def brandes_inputs(seed=0, n=60, count=50):
    from binsim.features import _csr
    from binsim.synth import gen_function

    out = []
    for s in range(count):
        cfg = gen_function(seed + s, min_vertices=n // 2, max_vertices=n)
        nn_, (p, i), (rp, ri) = _csr(cfg)
        out.append((nn_, p, i, rp, ri))
    return out


def bench(fn, repeat):
    best = float("inf")
    result = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if _kernels.compiled is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    backends = {"cython": _kernels.compiled, "python": py}

    corpus, offsets, syn0, syn1, table = sgns_inputs()
    sg_args = (5, 5, 0.025, 0.025e-4, 0, int(offsets[-1]), 7)
    graphs = brandes_inputs()
    rows = []
    outs = {}
    for name, mod in backends.items():
        def sgns(mod=mod):
            a0, a1 = syn0.copy(), syn1.copy()
            mod.sgns_epoch(corpus, offsets, a0, a1, table, np.zeros(0), *sg_args)
            return a0

        def brandes(mod=mod):
            return [np.asarray(mod.brandes(*g)) for g in graphs]

        t_sg, o_sg = bench(sgns, args.repeat)
        t_br, o_br = bench(brandes, args.repeat)
        outs[name] = (o_sg, o_br)
        rows.append((name, t_sg, t_br))

    same = np.array_equal(outs["cython"][0], outs["python"][0]) and all(
        np.array_equal(a, b) for a, b in zip(outs["cython"][1], outs["python"][1]))
    print(f"skip-gram epoch: {int(offsets[-1])} tokens, dim {syn0.shape[1]}; brandes: {len(graphs)} graphs")
    print(f"{'backend':<8} {'sgns (s)':>10} {'brandes (s)':>12}")
    for name, t_sg, t_br in rows:
        print(f"{name:<8} {t_sg:>10.4f} {t_br:>12.4f}")
    (_, c_sg, c_br), (_, p_sg, p_br) = rows
    print(f"speedup  {p_sg / c_sg:>10.1f}x {p_br / c_br:>11.1f}x")
    print("outputs identical:", same)


if __name__ == "__main__":
    main()
