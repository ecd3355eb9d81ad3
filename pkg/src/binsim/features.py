"""Vertex feature extractors: MFE, i2v_mean, i2v_attention and i2v_RNN.

The i2v aggregators are written once, as batched autodiff graphs over many
vertices; the single-vertex helpers wrap a batch of one.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import _kernels, nn
from .cfg import CFG, DEFAULT_IMM_THRESHOLD, Vertex, parse_int, vertex_tokens
from .i2v import PAD_ID, EmbeddingTable

log = logging.getLogger(__name__)

CLASSES = ("transfer", "arithmetic", "call", "other")
_CLASS_ALIASES = {"arith": "arithmetic", "transfers": "transfer", "calls": "call", "mov": "transfer"}
MFE_NAMES = (
    "num_consts",
    "num_strings",
    "num_transfer",
    "num_calls",
    "num_instructions",
    "num_arithmetic",
    "offspring",
    "betweenness",
)


@dataclass
class FeatureMatrix:
    values: np.ndarray
    extractor: str
    degenerate: int = 0

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise nn.NumericalError(f"{self.extractor}: non-finite features")

    @property
    def dim(self) -> int:
        return self.values.shape[1]


class InstructionClassTable:
    """Per-architecture mnemonic -> class map; unlisted mnemonics are ``other``."""

    def __init__(self, table: dict[str, dict[str, str]]):
        self.table = {
            arch.upper(): {m.lower(): _canonical_class(c) for m, c in entries.items()}
            for arch, entries in table.items()
        }

    @classmethod
    def default(cls) -> "InstructionClassTable":
        text = resources.files("binsim.data").joinpath("class_tables.json").read_text()
        return cls(json.loads(text))

    @classmethod
    def from_file(cls, path) -> "InstructionClassTable":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def classify(self, arch: str, mnemonic: str) -> str:
        return self.table.get(arch.upper(), {}).get(mnemonic.lower(), "other")


def _canonical_class(name: str) -> str:
    name = name.lower()
    name = _CLASS_ALIASES.get(name, name)
    return name if name in CLASSES else "other"


# -- graph features ------------------------------------------------------------


def _csr(cfg: CFG):
    pos = {v.id: i for i, v in enumerate(cfg.vertices)}
    n = len(pos)
    succ: list[list[int]] = [[] for _ in range(n)]
    pred: list[list[int]] = [[] for _ in range(n)]
    for a, b in cfg.edges:
        ia, ib = pos[a], pos[b]
        if ia == ib or ib in succ[ia]:
            continue
        succ[ia].append(ib)
        pred[ib].append(ia)

    def pack(lists):
        ptr = np.zeros(n + 1, dtype=np.int64)
        ptr[1:] = np.cumsum([len(x) for x in lists])
        idx = np.asarray([j for x in lists for j in x], dtype=np.int32)
        return ptr, idx

    return n, pack(succ), pack(pred)


def betweenness(cfg: CFG, exact: bool = False) -> np.ndarray | list[Fraction]:
    """Unnormalized directed betweenness (Brandes), in ``cfg.vertices`` order.

    ``exact=True`` runs the same algorithm in rational arithmetic.
    """
    n, (ptr, idx), (rptr, ridx) = _csr(cfg)
    if exact:
        return _kernels.python.brandes(n, ptr, idx, rptr, ridx, exact=True)
    return _kernels.brandes(n, ptr, idx, rptr, ridx)


def offspring(cfg: CFG) -> np.ndarray:
    """Number of distinct immediate successors of each vertex."""
    succ = cfg.successors()
    return np.asarray([len(succ[v.id]) for v in cfg.vertices], dtype=np.float64)


def _vertex_counts(vertex: Vertex, arch: str, classes: InstructionClassTable) -> list[float]:
    consts = strings = transfer = calls = arith = 0
    n = 0
    for ins in vertex.real_instructions:
        if ins.is_pad:
            continue
        n += 1
        if ins.num_consts is not None:
            consts += ins.num_consts
        else:
            consts += sum(1 for op in ins.operands if parse_int(op) is not None)
        strings += ins.num_strings or 0
        cls = _canonical_class(ins.class_tag) if ins.class_tag else classes.classify(arch, ins.mnemonic)
        if cls == "transfer":
            transfer += 1
        elif cls == "call":
            calls += 1
        elif cls == "arithmetic":
            arith += 1
    return [consts, strings, transfer, calls, n, arith]


def mfe_features(
    cfg: CFG, class_table: InstructionClassTable | None = None, drop_betweenness: bool = False
) -> FeatureMatrix:
    """The eight hand-picked per-vertex statistics (seven without betweenness)."""
    classes = class_table or InstructionClassTable.default()
    rows = np.asarray([_vertex_counts(v, cfg.arch, classes) for v in cfg.vertices], dtype=np.float64)
    cols = [rows, offspring(cfg)[:, None]]
    if not drop_betweenness:
        cols.append(np.asarray(betweenness(cfg))[:, None])
    return FeatureMatrix(np.hstack(cols), "mfe")


# -- trainable extractor parameters --------------------------------------------


@dataclass
class AttentionParams:
    weights: nn.Tensor

    @classmethod
    def uniform(cls, length: int) -> "AttentionParams":
        return cls(nn.Tensor(np.ones((length, 1)), requires_grad=True, name="attention"))

    @property
    def length(self) -> int:
        return self.weights.shape[0]


GRU_GATES = ("z", "r", "n")


@dataclass
class GruParams:
    """Stacked GRU weights; each layer holds W_g (in x H), U_g (H x H), b_g (1 x H)."""

    layers: list[dict[str, nn.Tensor]] = field(default_factory=list)

    @classmethod
    def init(cls, input_dim: int, hidden: int, n_layers: int = 3, seed: int = 0) -> "GruParams":
        rng = np.random.default_rng(seed)
        layers = []
        for layer in range(n_layers):
            fan_in = input_dim if layer == 0 else hidden
            params = {}
            for g in GRU_GATES:
                params[f"W{g}"] = rng.uniform(-1, 1, (fan_in, hidden)) / np.sqrt(fan_in)
                params[f"U{g}"] = rng.uniform(-1, 1, (hidden, hidden)) / np.sqrt(hidden)
                params[f"b{g}"] = np.zeros((1, hidden))
            layers.append({k: nn.Tensor(v, requires_grad=True, name=f"gru{layer}.{k}") for k, v in params.items()})
        return cls(layers)

    @property
    def hidden(self) -> int:
        return self.layers[0]["Uz"].shape[0]

    @property
    def input_dim(self) -> int:
        return self.layers[0]["Wz"].shape[0]

    def tensors(self) -> list[tuple[str, nn.Tensor]]:
        return [(f"gru{i}.{k}", t) for i, layer in enumerate(self.layers) for k, t in sorted(layer.items())]

    def validate(self) -> None:
        H = self.hidden
        for i, layer in enumerate(self.layers):
            fan_in = self.input_dim if i == 0 else H
            for g in GRU_GATES:
                if layer[f"W{g}"].shape != (fan_in, H) or layer[f"U{g}"].shape != (H, H) or layer[f"b{g}"].shape != (1, H):
                    raise nn.ShapeError(f"gru layer {i}", layer[f"W{g}"].shape, layer[f"U{g}"].shape)


# -- batched aggregation --------------------------------------------------------


class VertexBatch:
    """Token ids of many vertices laid out for batched aggregation."""

    def __init__(self, token_ids: Sequence[Sequence[int]], fixed_len: int):
        self.fixed_len = fixed_len
        seqs = [list(t)[:fixed_len] for t in token_ids]
        self.n = len(seqs)
        self.lens = np.asarray([len(s) for s in seqs], dtype=np.int64)
        self.flat_vertex = np.repeat(np.arange(self.n), self.lens)
        self.flat_pos = np.concatenate([np.arange(k) for k in self.lens]) if self.n else np.zeros(0, np.int64)
        self.flat_tok = np.asarray([t for s in seqs for t in s], dtype=np.int64)
        F = len(self.flat_tok)
        self.incidence = sp.csr_matrix(
            (np.ones(F), (self.flat_vertex, np.arange(F))), shape=(self.n, F)
        )
        self.empty = (self.lens == 0).astype(np.float64)[:, None]
        self.denominator = np.maximum(self.lens, 1).astype(np.float64)[:, None]
        width = int(self.lens.max()) if self.n else 0
        self.tok_matrix = np.full((self.n, width), PAD_ID, dtype=np.int64)
        for i, s in enumerate(seqs):
            self.tok_matrix[i, : len(s)] = s

    @property
    def degenerate(self) -> int:
        return int((self.lens == 0).sum())


def mean_features(batch: VertexBatch, embeddings: nn.Tensor) -> nn.Tensor:
    """Per-vertex arithmetic mean of instruction vectors (PAD excluded)."""
    rows = nn.take(embeddings, batch.flat_tok)
    return nn.div(nn.spmm(batch.incidence, rows), batch.denominator)


def attention_features(batch: VertexBatch, embeddings: nn.Tensor, weights: nn.Tensor) -> nn.Tensor:
    """Position-weighted mean: sum_j a[j] vec_j / sum_j a[j] over real positions."""
    if weights.shape[0] < batch.fixed_len:
        raise nn.ShapeError("attention", weights.shape, (batch.fixed_len, 1))
    a_pos = nn.take(weights, batch.flat_pos)
    rows = nn.take(embeddings, batch.flat_tok)
    num = nn.spmm(batch.incidence, nn.mul(a_pos, rows))
    den = nn.add(nn.spmm(batch.incidence, a_pos), batch.empty)
    try:
        return nn.div(num, den)
    except nn.NumericalError:
        raise nn.NumericalError("i2v_attention: weights sum to zero over a vertex's instructions") from None


def _gru_cell(x: nn.Tensor, h: nn.Tensor, p: dict[str, nn.Tensor]) -> nn.Tensor:
    z = nn.sigmoid(nn.add(nn.add(nn.matmul(x, p["Wz"]), nn.matmul(h, p["Uz"])), p["bz"]))
    r = nn.sigmoid(nn.add(nn.add(nn.matmul(x, p["Wr"]), nn.matmul(h, p["Ur"])), p["br"]))
    cand = nn.tanh(nn.add(nn.add(nn.matmul(x, p["Wn"]), nn.matmul(nn.mul(r, h), p["Un"])), p["bn"]))
    # (1 - z) * cand + z * h
    return nn.add(cand, nn.mul(z, nn.sub(h, cand)))


def rnn_features(batch: VertexBatch, embeddings: nn.Tensor, gru: GruParams) -> nn.Tensor:
    """Last hidden state of a stacked GRU run over each vertex's real instructions."""
    H = gru.hidden
    if embeddings.shape[1] != gru.input_dim:
        raise nn.ShapeError("i2v_rnn", embeddings.shape, (gru.input_dim, H))
    hs = [nn.Tensor(np.zeros((batch.n, H))) for _ in gru.layers]
    for t in range(batch.tok_matrix.shape[1]):
        active = (batch.lens > t).astype(np.float64)[:, None]
        x = nn.take(embeddings, batch.tok_matrix[:, t])
        for li, layer in enumerate(gru.layers):
            h_new = _gru_cell(x, hs[li], layer)
            # finished sequences keep their state
            hs[li] = nn.add(hs[li], nn.mul(active, nn.sub(h_new, hs[li])))
            x = hs[li]
    return hs[-1]


# -- single-vertex helpers ------------------------------------------------------------


def _ids(vertex: Vertex, table: EmbeddingTable, imm_threshold: int) -> list[int]:
    return [table.id(t) for t in vertex_tokens(vertex, imm_threshold)]


def _single(vertex, table, fixed_len, imm_threshold):
    ids = _ids(vertex, table, imm_threshold)
    if not ids:
        log.debug("vertex %s has no real instructions; using a zero feature vector", vertex.id)
    return VertexBatch([ids], fixed_len or max(len(ids), 1))


def i2v_mean(vertex: Vertex, table: EmbeddingTable, fixed_len: int | None = None,
             imm_threshold: int = DEFAULT_IMM_THRESHOLD) -> np.ndarray:
    batch = _single(vertex, table, fixed_len, imm_threshold)
    return mean_features(batch, nn.Tensor(table.vectors)).data[0]


def i2v_attention(vertex: Vertex, table: EmbeddingTable, params: AttentionParams,
                  imm_threshold: int = DEFAULT_IMM_THRESHOLD) -> np.ndarray:
    batch = _single(vertex, table, params.length, imm_threshold)
    return attention_features(batch, nn.Tensor(table.vectors), params.weights).data[0]


def i2v_rnn(vertex: Vertex, table: EmbeddingTable, params: GruParams, fixed_len: int | None = None,
            imm_threshold: int = DEFAULT_IMM_THRESHOLD) -> np.ndarray:
    batch = _single(vertex, table, fixed_len, imm_threshold)
    return rnn_features(batch, nn.Tensor(table.vectors), params).data[0]
