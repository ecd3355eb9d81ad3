"""Small builders shared by the test modules."""

from __future__ import annotations

import numpy as np

from binsim.cfg import CFG, Dataset, RawInstruction, Vertex
from binsim.i2v import EmbeddingTable

TINY_TOKENS = ["PAD", "UNK", "mov r0,r1", "add r0,1", "xor r0,r0", "call memcpy", "ret", "load r1,[sp+4]"]
TINY_MNEMONICS = [("mov", ("r0", "r1")), ("add", ("r0", "1")), ("xor", ("r0", "r0")), ("call", ("memcpy",)),
                  ("ret", ()), ("load", ("r1", "[sp+4]")), ("sub", ("r2", "7"))]


def random_cfg(rng: np.random.Generator, max_vertices: int = 5, max_instructions: int = 4,
               cfg_id: str = "g", source_id: str = "s", edge_p: float = 0.4) -> CFG:
    n = int(rng.integers(1, max_vertices + 1))
    verts = []
    for i in range(n):
        k = int(rng.integers(1, max_instructions + 1))
        body = []
        for _ in range(k):
            m, ops = TINY_MNEMONICS[int(rng.integers(len(TINY_MNEMONICS)))]
            body.append(RawInstruction(m, ops))
        verts.append(Vertex.of(i, body))
    edges = [(a, b) for a in range(n) for b in range(n) if rng.random() < edge_p]
    return CFG(id=cfg_id, source_id=source_id, compiler="cc", arch="SYNTH", opt="O0",
               vertices=tuple(verts), edges=tuple(edges))


def tiny_table(dim: int = 6, seed: int = 0) -> EmbeddingTable:
    rng = np.random.default_rng(seed)
    vecs = rng.normal(0.0, 0.5, (len(TINY_TOKENS), dim))
    vecs[0] = 0.0
    return EmbeddingTable(list(TINY_TOKENS), vecs)


def grouped_dataset(n_groups: int, per_group: int, seed: int = 0, **kw) -> Dataset:
    rng = np.random.default_rng(seed)
    cfgs = []
    for g in range(n_groups):
        for k in range(per_group):
            cfgs.append(random_cfg(rng, cfg_id=f"g{g}-{k}", source_id=f"s{g}", **kw))
    return Dataset(cfgs)
