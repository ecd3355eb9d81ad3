"""instruction2vec: skip-gram instruction embeddings with negative sampling."""

from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from . import _kernels
from .cfg import PAD

log = logging.getLogger(__name__)

UNK = "UNK"
PAD_ID = 0
UNK_ID = 1


class ConfigError(ValueError):
    pass


class TableFormatError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


@dataclass
class Vocabulary:
    tokens: list[str]
    counts: list[int]
    min_count: int
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.tokens[:2] != [PAD, UNK]:
            raise ValueError("vocabulary must start with PAD, UNK")
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        get = self.index.get
        return [get(t, UNK_ID) for t in tokens]


def build_vocab(corpus: Iterable[Sequence[str]], min_count: int = 8) -> Vocabulary:
    """Count tokens; those seen fewer than ``min_count`` times collapse into UNK."""
    if min_count < 1:
        raise ConfigError("min_count must be positive")
    counts: Counter[str] = Counter()
    for line in corpus:
        counts.update(line)
    counts.pop(PAD, None)
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_count and t != UNK), key=lambda t: (-counts[t], t))
    unk = sum(c for t, c in counts.items() if c < min_count or t == UNK)
    log.info("vocab: %d tokens kept, %d occurrences mapped to UNK", len(kept), unk)
    return Vocabulary([PAD, UNK] + kept, [0, unk] + [counts[t] for t in kept], min_count)


@dataclass
class EmbeddingTable:
    tokens: list[str]
    vectors: np.ndarray
    arch: str = ""
    losses: list[float] = field(default_factory=list, compare=False, repr=False)
    eval_losses: list[float] = field(default_factory=list, compare=False, repr=False)
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.tokens):
            raise ValueError("vectors must have one row per token")
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, EmbeddingTable)
            and self.tokens == other.tokens
            and self.vectors.shape == other.vectors.shape
            and bool(np.array_equal(self.vectors, other.vectors))
        )

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        if token == PAD:
            return PAD_ID
        return self.index.get(token, self.index.get(UNK, PAD_ID))

    def vocabulary(self) -> Vocabulary:
        return Vocabulary(list(self.tokens), [0] * len(self.tokens), 1)


@dataclass
class SkipGramConfig:
    dim: int = 100
    window: int = 8
    min_count: int = 8
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025
    min_lr_fraction: float = 1e-4
    subsample: float = 0.0
    table_size: int = 1_000_000
    seed: int = 1
    threads: int = 1
    eval_pairs: int = 20_000

    def validate(self) -> None:
        for name in ("dim", "window", "min_count", "negatives", "epochs", "table_size", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.eval_pairs < 0:
            raise ConfigError("eval_pairs must be >= 0")
        if not self.lr > 0 or self.subsample < 0:
            raise ConfigError("lr must be positive and subsample nonnegative")


def _unigram_table(counts: Sequence[int], size: int) -> np.ndarray:
    weights = np.asarray(counts, dtype=np.float64) ** 0.75
    if weights.sum() <= 0:
        raise ValueError("no token has a positive count")
    cum = np.cumsum(weights / weights.sum())
    cum[-1] = 1.0
    pos = (np.arange(size, dtype=np.float64) + 0.5) / size
    return np.searchsorted(cum, pos, side="right").astype(np.int32)


def _flatten(corpus: Iterable[Sequence[str]], vocab: Vocabulary) -> tuple[np.ndarray, np.ndarray]:
    ids: list[int] = []
    offsets = [0]
    for line in corpus:
        ids.extend(i for i in vocab.encode(line) if i != PAD_ID)
        offsets.append(len(ids))
    return np.asarray(ids, dtype=np.int32), np.asarray(offsets, dtype=np.int64)


def _eval_sample(corpus_ids, offsets, table, config):
    """Fixed (center, context, negatives) triples for an update-free loss probe.

    The online loss is measured before each update while the learning rate
    decays, so it can rise late in training even as the model improves.
    """
    n_sent = len(offsets) - 1
    if config.eval_pairs == 0 or n_sent == 0 or offsets[-1] == 0:
        return None
    rng = np.random.default_rng([config.seed, 0xE7A1])
    lens = np.diff(offsets)
    sent = rng.choice(n_sent, size=config.eval_pairs, p=lens / lens.sum())
    pos = offsets[sent] + (rng.random(config.eval_pairs) * lens[sent]).astype(np.int64)
    shift = rng.integers(1, config.window + 1, size=config.eval_pairs) * rng.choice((-1, 1), size=config.eval_pairs)
    ctx = pos + shift
    ok = (ctx >= offsets[sent]) & (ctx < offsets[sent + 1])
    if not ok.any():
        return None
    neg = table[rng.integers(0, len(table), size=(int(ok.sum()), config.negatives))]
    return corpus_ids[pos[ok]], corpus_ids[ctx[ok]], neg


def _eval_loss(sample, syn0, syn1) -> float:
    center, ctx, neg = sample
    f = np.clip(np.einsum("ij,ij->i", syn0[center], syn1[ctx]), -50.0, 50.0)
    g = np.clip(np.einsum("ij,ikj->ik", syn0[center], syn1[neg]), -50.0, 50.0)
    return float((np.logaddexp(0.0, -f).sum() + np.logaddexp(0.0, g).sum()) / len(center))


def train_skipgram(
    corpus: Iterable[Sequence[str]],
    vocab: Vocabulary,
    config: SkipGramConfig | None = None,
    arch: str = "",
) -> EmbeddingTable:
    """Train skip-gram embeddings with negative sampling.

    With ``config.threads == 1`` the result depends only on the inputs and
    the seed. More threads run lock-free (Hogwild) updates on shared
    matrices and are not reproducible.
    """
    config = config or SkipGramConfig()
    config.validate()
    corpus_ids, offsets = _flatten(corpus, vocab)
    n_words = int(offsets[-1])
    counts = np.asarray(vocab.counts, dtype=np.float64)
    counts[PAD_ID] = 0
    table = _unigram_table(counts, config.table_size) if counts.sum() > 0 else np.zeros(1, np.int32)
    if config.subsample > 0:
        thr = config.subsample * max(counts.sum(), 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            keep = np.where(counts > 0, (np.sqrt(counts / thr) + 1.0) * thr / counts, 1.0)
    else:
        keep = np.zeros(0, dtype=np.float64)

    rng = np.random.default_rng(config.seed)
    syn0 = (rng.random((len(vocab), config.dim)) - 0.5) / config.dim
    syn0[PAD_ID] = 0.0
    syn1 = np.zeros_like(syn0)

    total = n_words * config.epochs
    min_alpha = config.lr * config.min_lr_fraction
    rnd = config.seed & ((1 << 64) - 1)
    done = 0
    losses: list[float] = []
    eval_losses: list[float] = []
    probe = _eval_sample(corpus_ids, offsets, table, config)
    n_sent = len(offsets) - 1
    for epoch in range(config.epochs):
        if config.threads == 1 or n_sent < 2:
            rnd, loss, pairs, done = _kernels.sgns_epoch(
                corpus_ids, offsets, syn0, syn1, table, keep,
                config.window, config.negatives, config.lr, min_alpha, done, total, rnd,
            )
        else:
            loss, pairs, done = _hogwild_epoch(
                corpus_ids, offsets, syn0, syn1, table, keep, config, min_alpha, done, total, epoch
            )
        losses.append(loss / pairs if pairs else 0.0)
        if probe is not None:
            eval_losses.append(_eval_loss(probe, syn0, syn1))
        log.info("skip-gram epoch %d: mean loss %.4f over %d pairs", epoch + 1, losses[-1], pairs)

    if np.any(syn0[PAD_ID] != 0.0) or not np.all(np.isfinite(syn0)):
        raise ArithmeticError("skip-gram training produced an invalid table")
    return EmbeddingTable(list(vocab.tokens), syn0, arch=arch, losses=losses, eval_losses=eval_losses)


def _hogwild_epoch(corpus_ids, offsets, syn0, syn1, table, keep, config, min_alpha, done, total, epoch):
    n_sent = len(offsets) - 1
    bounds = np.linspace(0, n_sent, config.threads + 1).astype(int)
    jobs = []
    for t in range(config.threads):
        lo, hi = bounds[t], bounds[t + 1]
        if hi <= lo:
            continue
        sub_off = np.ascontiguousarray(offsets[lo : hi + 1])
        seed = (config.seed * 1_000_003 + epoch * 7919 + t) & ((1 << 64) - 1)
        jobs.append((sub_off, done + int(offsets[lo]), seed))
    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        results = list(
            pool.map(
                lambda j: _kernels.sgns_epoch(
                    corpus_ids, j[0], syn0, syn1, table, keep,
                    config.window, config.negatives, config.lr, min_alpha, j[1], total, j[2],
                ),
                jobs,
            )
        )
    loss = sum(r[1] for r in results)
    pairs = sum(r[2] for r in results)
    return loss, pairs, done + int(offsets[-1])


def random_table(vocab: Vocabulary, dim: int, seed: int = 0, arch: str = "") -> EmbeddingTable:
    """Uniform(+-0.5/dim) vector per retained token; rare tokens share the UNK row."""
    if dim < 1:
        raise ConfigError("dim must be >= 1")
    rng = np.random.default_rng(seed)
    vecs = rng.uniform(-0.5 / dim, 0.5 / dim, size=(len(vocab), dim))
    vecs[PAD_ID] = 0.0
    return EmbeddingTable(list(vocab.tokens), vecs, arch=arch)


# -- serving ----------------------------------------------------------------


def lookup(table: EmbeddingTable, token: str) -> np.ndarray:
    return table.vectors[table.id(token)]


def _cosines(table: EmbeddingTable, q: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(table.vectors, axis=1)
    qn = float(np.linalg.norm(q))
    out = np.full(len(table), -np.inf)
    ok = norms > 0
    if qn > 0:
        out[ok] = (table.vectors[ok] @ q) / (norms[ok] * qn)
    return np.clip(out, -1.0, 1.0)


def _ranked(scores: np.ndarray, exclude: set[int], k: int, tokens: Sequence[str]) -> list[tuple[str, float]]:
    order = np.argsort(-scores, kind="stable")
    out = []
    for i in order:
        if i in exclude or not np.isfinite(scores[i]):
            continue
        out.append((tokens[i], float(scores[i])))
        if len(out) == k:
            break
    return out


def nearest_neighbors(table: EmbeddingTable, token: str, k: int = 10) -> list[tuple[str, float]]:
    """The ``k`` tokens most cosine-similar to ``token`` (excluding itself)."""
    qi = table.id(token)
    return _ranked(_cosines(table, table.vectors[qi]), {qi}, k, table.tokens)


def analogy(table: EmbeddingTable, a: str, b: str, c: str, exclude_inputs: bool = True) -> str:
    """Token nearest (by cosine) to ``vec(b) - vec(a) + vec(c)``."""
    for t in (a, b, c):
        if t not in table.index or t in (PAD, UNK):
            raise KeyError(f"token not in vocabulary: {t!r}")
    ia, ib, ic = table.index[a], table.index[b], table.index[c]
    target = table.vectors[ib] - table.vectors[ia] + table.vectors[ic]
    exclude = {ia, ib, ic, PAD_ID} if exclude_inputs else {PAD_ID}
    best = _ranked(_cosines(table, target), exclude, 1, table.tokens)
    if not best:
        raise ValueError("no candidate token for analogy")
    return best[0][0]


# -- I/O -----------------------------------------------------------------------


def save_table(table: EmbeddingTable, out: IO[str]) -> None:
    out.write(f"{len(table)} {table.dim}\n")
    for tok, row in zip(table.tokens, table.vectors):
        out.write(tok + " " + " ".join(repr(float(x)) for x in row) + "\n")


def load_table(stream: IO[str], arch: str = "") -> EmbeddingTable:
    header = stream.readline()
    parts = header.split()
    if len(parts) != 2 or not all(p.isdigit() for p in parts):
        raise TableFormatError(1, f"expected '<vocab_size> <dim>' header, got {header.strip()!r}")
    n, dim = int(parts[0]), int(parts[1])
    tokens: list[str] = []
    rows = np.zeros((n, dim), dtype=np.float64)
    for i in range(n):
        line = stream.readline()
        lineno = i + 2
        if not line:
            raise TableFormatError(lineno, f"file truncated: expected {n} rows, got {i}")
        fields = line.rstrip("\n").rsplit(" ", dim)
        if len(fields) != dim + 1 or not fields[0]:
            raise TableFormatError(lineno, f"expected token and {dim} values")
        try:
            rows[i] = [float(x) for x in fields[1:]]
        except ValueError:
            raise TableFormatError(lineno, "non-numeric value") from None
        if not np.all(np.isfinite(rows[i])):
            raise TableFormatError(lineno, "non-finite value")
        tokens.append(fields[0])
    if stream.readline().strip():
        raise TableFormatError(n + 2, "trailing data after declared rows")
    return EmbeddingTable(tokens, rows, arch=arch)


def save_table_file(table: EmbeddingTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        save_table(table, fh)


def load_table_file(path, arch: str = "") -> EmbeddingTable:
    with open(path, encoding="utf-8") as fh:
        return load_table(fh, arch=arch)


def read_corpus(stream: IO[str]) -> list[list[str]]:
    """One function per line, tokens separated by tabs."""
    return [line.rstrip("\n").split("\t") for line in stream if line.strip()]


def write_corpus(lines: Iterable[Sequence[str]], out: IO[str]) -> None:
    for toks in lines:
        out.write("\t".join(toks) + "\n")


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0 or nv == 0:
        raise ValueError("cosine of a zero vector")
    return max(-1.0, min(1.0, float(u @ v) / (nu * nv)))
