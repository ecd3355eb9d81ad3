"""Structure2Vec graph embedding network and siamese least-squares training."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import nn
from .cfg import CFG, Dataset, vertex_tokens
from .evaluation import auc
from .features import (
    AttentionParams,
    GruParams,
    InstructionClassTable,
    VertexBatch,
    attention_features,
    mean_features,
    mfe_features,
    rnn_features,
)
from .i2v import PAD_ID, EmbeddingTable

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
EXTRACTORS = ("mfe", "mean", "attention", "rnn", "random")


class ModelFormatError(ValueError):
    pass


class TrainingError(ArithmeticError):
    def __init__(self, epoch: int, batch: int, cause: str):
        self.epoch, self.batch = epoch, batch
        super().__init__(f"epoch {epoch}, batch {batch}: {cause}")


def derive_seed(base: int, *parts) -> int:
    """Stable 63-bit seed from a base seed and any labels (e.g. split, epoch)."""
    h = hashlib.sha256(repr((int(base),) + tuple(parts)).encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


@dataclass
class ModelConfig:
    extractor: str = "mean"
    static: bool = True
    p: int = 64
    T: int = 2
    ell: int = 2
    m: int = 150
    max_vertices: int = 100
    imm_threshold: int = 5000
    mu_init: str = "random"
    neighbors: str = "undirected"
    rnn_layers: int = 3
    drop_betweenness: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.extractor not in EXTRACTORS:
            raise ValueError(f"unknown extractor {self.extractor!r}; expected one of {EXTRACTORS}")
        for name in ("p", "T", "ell", "m", "max_vertices", "imm_threshold", "rnn_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.mu_init not in ("random", "zeros"):
            raise ValueError("mu_init must be 'random' or 'zeros'")
        if self.neighbors not in ("undirected", "successors", "predecessors"):
            raise ValueError("neighbors must be undirected, successors or predecessors")


@dataclass
class TrainConfig:
    batch_size: int = 250
    lr: float = 0.001
    epochs: int = 50
    seed: int = 0
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def validate(self) -> None:
        if self.batch_size < 1 or self.epochs < 0 or not self.lr > 0:
            raise ValueError("batch_size and lr must be positive, epochs nonnegative")


@dataclass
class PreparedGraph:
    id: str
    n: int
    token_ids: list[list[int]]
    edge_rows: np.ndarray
    edge_cols: np.ndarray
    mfe: np.ndarray | None
    mu0: np.ndarray | None


class GraphEmbeddingModel:
    """Structure2Vec over per-vertex features from one configured extractor.

    Row-vector convention: with ``X`` the stacked vertex features,
    ``mu <- tanh(X @ W1 + sigma(A @ mu))`` for ``T`` rounds where
    ``sigma(y) = relu(... relu(y @ P_l^T) ...) @ P_1^T``, and the graph
    embedding is ``(sum of mu rows) @ W2^T``.
    """

    def __init__(self, config: ModelConfig, table: EmbeddingTable | None = None,
                 class_table: InstructionClassTable | None = None):
        config.validate()
        self.config = config
        self.class_table = class_table or InstructionClassTable.default()
        self._cache: dict[str, tuple[CFG, PreparedGraph]] = {}
        if config.extractor == "mfe":
            self.table = None
            self.embeddings = None
        else:
            if table is None:
                raise ValueError(f"extractor {config.extractor!r} needs an embedding table")
            vecs = table.vectors.copy()
            self.table = EmbeddingTable(list(table.tokens), vecs, arch=table.arch)
            self.embeddings = nn.Tensor(vecs, requires_grad=not config.static, name="embeddings")
            # the tensor and the table share storage
            self.table.vectors = self.embeddings.data
        self.params: dict[str, nn.Tensor] = {}
        self.attention: AttentionParams | None = None
        self.gru: GruParams | None = None

    @classmethod
    def create(cls, config: ModelConfig, table: EmbeddingTable | None = None,
               class_table: InstructionClassTable | None = None) -> "GraphEmbeddingModel":
        model = cls(config, table, class_table)
        model._init_params()
        return model

    # -- parameters ---------------------------------------------------------

    @property
    def d(self) -> int:
        c = self.config
        if c.extractor == "mfe":
            return 7 if c.drop_betweenness else 8
        # rnn hidden size equals the embedding dimension
        return self.table.dim

    def _init_params(self) -> None:
        c = self.config
        rng = np.random.default_rng(derive_seed(c.seed, "params"))
        bound = 1.0 / math.sqrt(c.p)

        def mat(name, shape):
            self.params[name] = nn.Tensor(rng.uniform(-bound, bound, shape), requires_grad=True, name=name)

        mat("W1", (self.d, c.p))
        mat("W2", (c.p, c.p))
        for i in range(1, c.ell + 1):
            mat(f"P{i}", (c.p, c.p))
        if c.extractor == "attention":
            self.attention = AttentionParams.uniform(c.m)
            self.params["attention"] = self.attention.weights
        if c.extractor == "rnn":
            self.gru = GruParams.init(self.table.dim, self.table.dim, c.rnn_layers, seed=derive_seed(c.seed, "gru"))
            self.params.update(self.gru.tensors())
        if self.embeddings is not None and self.embeddings.requires_grad:
            self.params["embeddings"] = self.embeddings

    def trainable(self) -> list[tuple[str, nn.Tensor]]:
        return [(k, t) for k, t in self.params.items() if t.requires_grad]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, arr in snap.items():
            self.params[k].data[...] = arr

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    # -- preparation ----------------------------------------------------------

    def prepare(self, cfg: CFG) -> PreparedGraph:
        hit = self._cache.get(cfg.id)
        if hit is not None and (hit[0] is cfg or hit[0] == cfg):
            return hit[1]
        c = self.config
        pos = {v.id: i for i, v in enumerate(cfg.vertices)}
        pairs: set[tuple[int, int]] = set()
        for a, b in cfg.edges:
            ia, ib = pos[a], pos[b]
            if c.neighbors in ("undirected", "successors"):
                pairs.add((ia, ib))
            if c.neighbors in ("undirected", "predecessors"):
                pairs.add((ib, ia))
        ordered = sorted(pairs)
        rows = np.asarray([r for r, _ in ordered], dtype=np.int64)
        cols = np.asarray([q for _, q in ordered], dtype=np.int64)
        token_ids: list[list[int]] = []
        mfe = None
        if c.extractor == "mfe":
            mfe = mfe_features(cfg, self.class_table, c.drop_betweenness).values
        else:
            for v in cfg.vertices:
                token_ids.append([self.table.id(t) for t in vertex_tokens(v, c.imm_threshold)][: c.m])
        mu0 = initial_mu(c.seed, c.p) if c.mu_init == "random" else None
        g = PreparedGraph(cfg.id, len(cfg.vertices), token_ids, rows, cols, mfe, mu0)
        self._cache[cfg.id] = (cfg, g)
        return g

    # -- forward ----------------------------------------------------------------

    def _features(self, graphs: Sequence[PreparedGraph]) -> nn.Tensor:
        c = self.config
        if c.extractor == "mfe":
            return nn.Tensor(np.vstack([g.mfe for g in graphs]))
        batch = VertexBatch([t for g in graphs for t in g.token_ids], c.m)
        if c.extractor in ("mean", "random"):
            return mean_features(batch, self.embeddings)
        if c.extractor == "attention":
            return attention_features(batch, self.embeddings, self.attention.weights)
        return rnn_features(batch, self.embeddings, self.gru)

    def embed_prepared(self, graphs: Sequence[PreparedGraph]) -> nn.Tensor:
        """Graph embeddings (one row per graph) as an autodiff tensor."""
        c = self.config
        sizes = np.asarray([g.n for g in graphs], dtype=np.int64)
        offs = np.concatenate([[0], np.cumsum(sizes)])
        N = int(offs[-1])
        rows = np.concatenate([g.edge_rows + o for g, o in zip(graphs, offs)])
        cols = np.concatenate([g.edge_cols + o for g, o in zip(graphs, offs)])
        adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(N, N))
        pool = sp.csr_matrix(
            (np.ones(N), (np.repeat(np.arange(len(graphs)), sizes), np.arange(N))), shape=(len(graphs), N)
        )
        X = self._features(graphs)
        if X.shape[1] != self.d:
            raise nn.ShapeError("embed", X.shape, (N, self.d))
        P = self.params
        wx = nn.matmul(X, P["W1"])
        if c.mu_init == "random":
            mu = nn.Tensor(np.repeat(np.vstack([g.mu0 for g in graphs]), sizes, axis=0))
        else:
            mu = nn.Tensor(np.zeros((N, c.p)))
        for _ in range(c.T):
            h = nn.matmul(nn.spmm(adj, mu), nn.transpose(P[f"P{c.ell}"]))
            for i in range(c.ell - 1, 0, -1):
                h = nn.matmul(nn.relu(h), nn.transpose(P[f"P{i}"]))
            mu = nn.tanh(nn.add(wx, h))
        return nn.matmul(nn.spmm(pool, mu), nn.transpose(P["W2"]))

    def embed(self, cfgs: Sequence[CFG], batch_size: int = 500) -> np.ndarray:
        out = []
        for i in range(0, len(cfgs), batch_size):
            out.append(self.embed_prepared([self.prepare(g) for g in cfgs[i : i + batch_size]]).data)
        return np.vstack(out) if out else np.zeros((0, self.config.p))


def initial_mu(seed: int, p: int) -> np.ndarray:
    """Round-zero vertex state: one vector per model seed, shared by every vertex.

    Keying it on anything graph-specific would inject per-graph noise that
    makes variants of one function look unrelated.
    """
    digest = hashlib.sha256(f"mu0:{int(seed)}".encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return rng.uniform(-1.0, 1.0, p) / math.sqrt(p)


def embed_graph(model: GraphEmbeddingModel, cfg: CFG) -> np.ndarray:
    return model.embed([cfg])[0]


def siamese_similarity(model: GraphEmbeddingModel, g1: CFG, g2: CFG) -> float:
    e = model.embed([g1, g2])
    return float(nn.cosine(e[0], e[1]).data)


# -- pairs and splits -------------------------------------------------------------


@dataclass
class PairSet:
    pairs: list[tuple[str, str, int]]
    split: str = "train"

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def labels(self) -> np.ndarray:
        return np.asarray([y for _, _, y in self.pairs], dtype=np.float64)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.pairs).encode()).hexdigest()


def generate_pairs(split: Dataset, seed: int, tag: str = "train") -> PairSet:
    """One similar (+1) and one dissimilar (-1) pair for every eligible CFG."""
    if len(split.groups) < 2:
        raise ValueError("pair generation needs at least two source groups")
    rng = np.random.default_rng(seed)
    cfgs = list(split.cfgs)
    out: list[tuple[str, str, int]] = []
    skipped = 0
    for cfg in cfgs:
        group = split.groups[cfg.source_id]
        if len(group) < 2:
            skipped += 1
            continue
        others = [g for g in group if g.id != cfg.id]
        sim = others[int(rng.integers(len(others)))]
        while True:
            cand = cfgs[int(rng.integers(len(cfgs)))]
            if cand.source_id != cfg.source_id:
                break
        out.append((cfg.id, sim.id, 1))
        out.append((cfg.id, cand.id, -1))
    if skipped:
        log.warning("generate_pairs: %d cfg(s) in singleton groups skipped", skipped)
    order = rng.permutation(len(out))
    return PairSet([out[i] for i in order], tag)


def split_dataset(dataset: Dataset, fractions: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0
                  ) -> tuple[Dataset, Dataset, Dataset]:
    """Partition source groups (not CFGs) into train/val/test."""
    groups = sorted(dataset.groups)
    n = len(groups)
    if n < 3:
        raise ValueError("split_dataset needs at least three source groups")
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError("fractions must be three nonnegative numbers summing to 1")
    perm = np.random.default_rng(seed).permutation(n)
    n_val = max(1, int(round(fractions[1] * n)))
    n_test = max(1, int(round(fractions[2] * n)))
    n_train = n - n_val - n_test
    if n_train < 1:
        raise ValueError("split leaves no training groups")
    shuffled = [groups[i] for i in perm]
    parts = (shuffled[:n_train], shuffled[n_train : n_train + n_val], shuffled[n_train + n_val :])
    return tuple(dataset.subset(p) for p in parts)  # type: ignore[return-value]


# -- loss and training ------------------------------------------------------


def pair_loss(model: GraphEmbeddingModel, batch: Sequence[tuple[str, str, int]], lookup: dict[str, CFG]) -> nn.Tensor:
    """Sum over pairs of (cosine(g1, g2) - y)^2."""
    if not batch:
        raise ValueError("empty batch")
    ids: list[str] = []
    where: dict[str, int] = {}
    for a, b, _ in batch:
        for g in (a, b):
            if g not in where:
                where[g] = len(ids)
                ids.append(g)
    emb = model.embed_prepared([model.prepare(lookup[g]) for g in ids])
    left = nn.take(emb, [where[a] for a, _, _ in batch])
    right = nn.take(emb, [where[b] for _, b, _ in batch])
    sims = nn.cosine(left, right)
    return nn.squared_error(sims, np.asarray([y for _, _, y in batch], dtype=np.float64))


def loss(model: GraphEmbeddingModel, batch: PairSet | Sequence[tuple[str, str, int]], dataset: Dataset) -> float:
    pairs = batch.pairs if isinstance(batch, PairSet) else batch
    return pair_loss(model, pairs, dataset.by_id).item()


def score_pairs(model: GraphEmbeddingModel, pairs: PairSet, lookup: dict[str, CFG]) -> np.ndarray:
    ids = sorted({g for a, b, _ in pairs.pairs for g in (a, b)})
    emb = model.embed([lookup[g] for g in ids])
    where = {g: i for i, g in enumerate(ids)}
    L = emb[[where[a] for a, _, _ in pairs.pairs]]
    R = emb[[where[b] for _, b, _ in pairs.pairs]]
    return np.asarray(nn.cosine(L, R).data).reshape(-1)


def _pair_metrics(model, pairs: PairSet, lookup) -> dict:
    s = score_pairs(model, pairs, lookup)
    y = pairs.labels
    return {
        "auc": auc(s, y),
        "gap": float(s[y > 0].mean() - s[y < 0].mean()),
        "loss": float(np.sum((s - y) ** 2) / len(y)),
    }


def _guarded_metrics(model, pairs: PairSet, lookup, epoch: int) -> dict:
    try:
        return _pair_metrics(model, pairs, lookup)
    except (nn.NumericalError, ArithmeticError) as exc:
        raise TrainingError(epoch, -1, f"evaluating {pairs.split} pairs: {exc}") from exc


@dataclass
class TrainResult:
    model: GraphEmbeddingModel
    history: list[dict] = field(default_factory=list)
    initial: dict = field(default_factory=dict)
    best_epoch: int = 0
    test: dict = field(default_factory=dict)
    splits: tuple | None = None


def train(model: GraphEmbeddingModel, dataset: Dataset, config: TrainConfig | None = None,
          splits: tuple[Dataset, Dataset, Dataset] | None = None) -> TrainResult:
    """Siamese training with Adam; returns the best-validation-AUC snapshot.

    Training pairs are regenerated every epoch from ``derive_seed(seed,
    "train", epoch)``; validation and test pairs are generated once.
    """
    config = config or TrainConfig()
    config.validate()
    if splits is None:
        splits = split_dataset(dataset, config.split, derive_seed(config.seed, "split"))
    train_ds, val_ds, test_ds = splits
    lookup = dataset.by_id
    val_pairs = generate_pairs(val_ds, derive_seed(config.seed, "val"), "val")
    test_pairs = generate_pairs(test_ds, derive_seed(config.seed, "test"), "test")
    result = TrainResult(model, splits=splits)
    result.initial = _guarded_metrics(model, val_pairs, lookup, epoch=0)
    if config.epochs == 0:
        return result

    state = nn.AdamState(lr=config.lr)
    named = model.trainable()
    tensors = [t for _, t in named]
    best_auc, best_snap = -1.0, model.snapshot()
    for epoch in range(1, config.epochs + 1):
        pairs = generate_pairs(train_ds, derive_seed(config.seed, "train", epoch), "train")
        total = 0.0
        for bi, start in enumerate(range(0, len(pairs), config.batch_size)):
            batch = pairs.pairs[start : start + config.batch_size]
            model.zero_grad()
            try:
                J = pair_loss(model, batch, lookup)
                J.backward()
                if model.embeddings is not None and model.embeddings.requires_grad:
                    model.embeddings.grad[PAD_ID] = 0.0
                nn.adam_step([t.data for t in tensors], [t.grad for t in tensors], state)
            except (nn.NumericalError, ArithmeticError) as exc:
                raise TrainingError(epoch, bi, str(exc)) from exc
            total += J.item()
        val = _guarded_metrics(model, val_pairs, lookup, epoch=epoch)
        rec = {
            "epoch": epoch,
            "train_loss": total / len(pairs),
            "val_auc": val["auc"],
            "val_gap": val["gap"],
            "val_loss": val["loss"],
            "train_pairs": pairs.digest(),
            "val_pairs": val_pairs.digest(),
        }
        result.history.append(rec)
        log.info("epoch %d: train loss %.4f, val auc %.4f", epoch, rec["train_loss"], rec["val_auc"])
        if val["auc"] > best_auc:
            best_auc, best_snap, result.best_epoch = val["auc"], model.snapshot(), epoch
    model.restore(best_snap)
    result.test = _guarded_metrics(model, test_pairs, lookup, epoch=result.best_epoch)
    return result


# -- checkpoints ------------------------------------------------------------------


def _array_json(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(x) for x in a.reshape(-1)]}


def _array_from_json(obj: dict, name: str) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in obj["shape"])
        data = np.asarray(obj["data"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{name}: malformed array ({exc})") from None
    if data.size != int(np.prod(shape)):
        raise ModelFormatError(f"{name}: shape {list(shape)} does not match {data.size} values")
    return data.reshape(shape)


def model_to_json(model: GraphEmbeddingModel, table_ref: str | None = None, extra: dict | None = None) -> dict:
    c = model.config
    obj = {
        "format": "binsim-model",
        "version": FORMAT_VERSION,
        "extractor": c.extractor,
        "static": c.static,
        "dims": {"d": model.d, "p": c.p, "ell": c.ell, "T": c.T, "m": c.m},
        "config": asdict(c),
        "seed": c.seed,
        "params": {k: _array_json(t.data) for k, t in model.params.items() if k != "embeddings"},
    }
    if model.table is not None:
        if table_ref is not None:
            obj["table"] = {"ref": table_ref, "sha256": _table_hash(model.table)}
        else:
            obj["table"] = {"tokens": list(model.table.tokens), **_array_json(model.table.vectors)}
    if extra:
        obj["extra"] = extra
    return obj


def _table_hash(table: EmbeddingTable) -> str:
    h = hashlib.sha256("\n".join(table.tokens).encode())
    h.update(np.ascontiguousarray(table.vectors).tobytes())
    return h.hexdigest()


def dumps_model(model: GraphEmbeddingModel, **kw) -> str:
    return json.dumps(model_to_json(model, **kw), sort_keys=True, separators=(",", ":"))


def save_model(model: GraphEmbeddingModel, path, table_ref: str | None = None, extra: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_model(model, table_ref=table_ref, extra=extra))


def model_from_json(obj: dict, table: EmbeddingTable | None = None) -> GraphEmbeddingModel:
    if obj.get("format") != "binsim-model":
        raise ModelFormatError("not a binsim model checkpoint")
    if obj.get("version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported checkpoint version {obj.get('version')!r}")
    known = {f.name for f in fields(ModelConfig)}
    cfg_obj = {k: v for k, v in obj.get("config", {}).items() if k in known}
    config = ModelConfig(**cfg_obj)
    if config.extractor != obj.get("extractor"):
        raise ModelFormatError("extractor tag disagrees with config")
    tab = obj.get("table")
    if config.extractor != "mfe":
        if tab is None:
            raise ModelFormatError("checkpoint lacks an embedding table")
        if "ref" in tab:
            if table is None:
                raise ModelFormatError(f"checkpoint references table {tab['ref']!r}; pass it explicitly")
            if tab.get("sha256") != _table_hash(table):
                raise ModelFormatError("referenced embedding table does not match checkpoint hash")
        else:
            vecs = _array_from_json(tab, "table")
            if vecs.ndim != 2 or len(tab.get("tokens", [])) != vecs.shape[0]:
                raise ModelFormatError("table tokens and rows disagree")
            table = EmbeddingTable(list(tab["tokens"]), vecs)
    model = GraphEmbeddingModel(config, table)
    dims = obj.get("dims", {})
    expect = {"d": model.d, "p": config.p, "ell": config.ell, "T": config.T, "m": config.m}
    if dims != expect:
        raise ModelFormatError(f"dims {dims} inconsistent with config {expect}")
    model._init_params()
    stored = obj.get("params", {})
    for name, t in model.params.items():
        if name == "embeddings":
            continue
        if name not in stored:
            raise ModelFormatError(f"missing parameter {name!r}")
        arr = _array_from_json(stored[name], name)
        if arr.shape != t.shape:
            raise ModelFormatError(f"{name}: expected shape {list(t.shape)}, got {list(arr.shape)}")
        t.data[...] = arr
    extra_names = set(stored) - set(model.params)
    if extra_names:
        raise ModelFormatError(f"unexpected parameters {sorted(extra_names)}")
    return model


def load_model(path, table: EmbeddingTable | None = None) -> GraphEmbeddingModel:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"checkpoint is not valid JSON: {exc}") from None
    return model_from_json(obj, table)


def clone(model: GraphEmbeddingModel) -> GraphEmbeddingModel:
    return model_from_json(json.loads(dumps_model(model)))
