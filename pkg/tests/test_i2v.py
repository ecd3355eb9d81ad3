import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from binsim import i2v
from binsim.i2v import (
    PAD_ID,
    UNK,
    UNK_ID,
    ConfigError,
    EmbeddingTable,
    SkipGramConfig,
    TableFormatError,
    analogy,
    build_vocab,
    cosine,
    load_table,
    lookup,
    nearest_neighbors,
    random_table,
    save_table,
    train_skipgram,
)


def test_vocab_min_count_boundary():
    corpus = [["x"] * 10 + ["y"] * 7 + ["z"] * 8]
    v = build_vocab(corpus, min_count=8)
    assert v.tokens[:2] == ["PAD", UNK]
    assert "x" in v.index and "z" in v.index and "y" not in v.index
    assert v.id("y") == UNK_ID
    assert v.counts[UNK_ID] == 7
    assert v.tokens[2:] == ["x", "z"]  # by descending count


def test_vocab_empty_corpus():
    with pytest.raises(ValueError):
        build_vocab([], 1)
    with pytest.raises(ValueError):
        build_vocab([[], []], 1)


def test_config_validation():
    with pytest.raises(ConfigError):
        SkipGramConfig(dim=0).validate()
    with pytest.raises(ConfigError):
        SkipGramConfig(window=0).validate()
    with pytest.raises(ConfigError):
        train_skipgram([["a"]], build_vocab([["a"]], 1), SkipGramConfig(lr=-1.0))


def _cooccurrence_corpus(seed: int) -> list[list[str]]:
    """A and B always appear side by side; C lives in other sentences.

    C's sentences draw from a separate filler pool. With one shared pool,
    A and C end up with near-identical context distributions and input-vector
    cosine (a second-order measure) ranks C above B.
    """
    rng = np.random.default_rng(seed)
    pool_ab = [f"f{i}" for i in range(30)]
    pool_c = [f"g{i}" for i in range(30)]
    out = []
    for _ in range(300):
        s = list(rng.choice(pool_ab, size=12))
        k = int(rng.integers(0, 11))
        s[k : k + 2] = ["A", "B"]
        out.append(s)
        t = list(rng.choice(pool_c, size=12))
        t[int(rng.integers(0, 12))] = "C"
        out.append(t)
    return out


def test_cooccurring_tokens_are_closer():
    gaps = []
    for seed in range(5):
        corpus = _cooccurrence_corpus(seed)
        vocab = build_vocab(corpus, 1)
        t = train_skipgram(corpus, vocab, SkipGramConfig(dim=16, window=2, min_count=1, epochs=5, seed=seed + 1,
                                                         table_size=100_000))
        a, b, c = lookup(t, "A"), lookup(t, "B"), lookup(t, "C")
        gaps.append(cosine(a, b) - cosine(a, c))
    assert np.mean(gaps) > 0


def test_training_keeps_pad_zero_and_reduces_probe_loss():
    corpus = _cooccurrence_corpus(0)
    vocab = build_vocab(corpus, 1)
    t = train_skipgram(corpus, vocab, SkipGramConfig(dim=16, window=4, min_count=1, epochs=4, table_size=100_000))
    assert not t.vectors[PAD_ID].any()
    assert np.all(np.isfinite(t.vectors))
    assert len(t.losses) == 4 and len(t.eval_losses) == 4
    assert t.eval_losses[-1] < t.eval_losses[0]


def test_degenerate_single_token_corpus():
    corpus = [["nop"] * 50]
    t = train_skipgram(corpus, build_vocab(corpus, 1), SkipGramConfig(dim=8, min_count=1, table_size=1000))
    assert np.all(np.isfinite(t.vectors))


def test_single_thread_training_is_byte_identical():
    corpus = _cooccurrence_corpus(3)
    vocab = build_vocab(corpus, 1)
    cfg = SkipGramConfig(dim=8, window=3, min_count=1, epochs=2, table_size=50_000, seed=7)
    outs = []
    for _ in range(2):
        buf = io.StringIO()
        save_table(train_skipgram(corpus, vocab, cfg), buf)
        outs.append(buf.getvalue())
    assert outs[0] == outs[1]


def test_hogwild_threads_run():
    corpus = _cooccurrence_corpus(4)
    vocab = build_vocab(corpus, 1)
    t = train_skipgram(corpus, vocab, SkipGramConfig(dim=8, min_count=1, epochs=1, table_size=50_000, threads=3))
    assert np.all(np.isfinite(t.vectors)) and not t.vectors[PAD_ID].any()


def test_random_table_properties():
    corpus = [["a"] * 5 + ["b"] * 5 + ["rare1", "rare2"]]
    vocab = build_vocab(corpus, 2)
    t1 = random_table(vocab, 10, seed=3)
    t2 = random_table(vocab, 10, seed=3)
    assert t1 == t2
    assert np.array_equal(lookup(t1, "rare1"), lookup(t1, "rare2"))
    assert np.array_equal(lookup(t1, "rare1"), lookup(t1, UNK))
    assert not lookup(t1, "PAD").any()
    assert np.abs(t1.vectors).max() <= 0.5 / 10
    assert random_table(vocab, 10, seed=4) != t1


def _table(rows: dict[str, list[float]]) -> EmbeddingTable:
    dim = len(next(iter(rows.values())))
    tokens = ["PAD", UNK] + list(rows)
    vecs = np.vstack([np.zeros(dim), np.full(dim, 0.01)] + [np.asarray(v, float) for v in rows.values()])
    return EmbeddingTable(tokens, vecs)


def test_lookup_cases():
    t = _table({"a": [1.0, 0.0], "b": [0.0, 1.0]})
    assert lookup(t, "a").tolist() == [1.0, 0.0]
    assert lookup(t, "never seen").tolist() == lookup(t, UNK).tolist()
    assert lookup(t, "PAD").tolist() == [0.0, 0.0]


def test_nearest_neighbors():
    t = _table({"a": [1.0, 0.0], "a2": [1.0, 0.0], "b": [0.0, 1.0], "c": [1.0, 1.0]})
    nn_ = nearest_neighbors(t, "a", 2)
    assert nn_[0] == ("a2", 1.0)
    assert "a" not in [tok for tok, _ in nn_]
    sims = [s for _, s in nearest_neighbors(t, "a", 10)]
    assert sims == sorted(sims, reverse=True)
    assert len(nearest_neighbors(t, "a", 100)) <= len(t) - 1


def test_analogy():
    t = _table({"x": [1.0, 0.0, 0.0], "y": [0.0, 1.0, 0.0], "z": [0.0, 0.0, 1.0], "w": [0.0, 1.0, 1.0]})
    assert analogy(t, "x", "x", "y", exclude_inputs=False) == "y"
    # y - x + z lands nearest to w once inputs are excluded
    assert analogy(t, "x", "y", "z") == "w"
    with pytest.raises(KeyError, match="nope"):
        analogy(t, "x", "nope", "y")


def test_table_round_trip_and_errors():
    t = _table({"mov r0,[sp+8]": [0.1, -2.5e-300], "add r0,1": [1.0 / 3.0, 7.0]})
    buf = io.StringIO()
    save_table(t, buf)
    assert load_table(io.StringIO(buf.getvalue())) == t
    text = buf.getvalue()
    with pytest.raises(TableFormatError) as err:
        load_table(io.StringIO(text.rsplit("\n", 2)[0] + "\n"))
    assert "line" in str(err.value)
    with pytest.raises(TableFormatError) as err:
        load_table(io.StringIO(text.replace("0.1 ", "zz ", 1)))
    assert err.value.line == 4  # header, PAD, UNK, then this row
    empty = EmbeddingTable([], np.zeros((0, 4)))
    buf = io.StringIO()
    save_table(empty, buf)
    assert buf.getvalue() == "0 4\n"
    assert load_table(io.StringIO("0 4\n")) == empty


def test_corpus_round_trip():
    lines = [["mov r0, [sp+8]", "ret"], ["nop"]]
    buf = io.StringIO()
    i2v.write_corpus(lines, buf)
    assert i2v.read_corpus(io.StringIO(buf.getvalue())) == lines


vec = arrays(np.float64, 5, elements=st.floats(-1e3, 1e3, allow_nan=False))


@settings(max_examples=200)
@given(vec, vec)
def test_cosine_properties(u, v):
    if np.linalg.norm(u) > 1e-6:
        assert abs(cosine(u, u) - 1.0) <= 1e-12
    if np.linalg.norm(u) > 1e-6 and np.linalg.norm(v) > 1e-6:
        assert cosine(u, v) == cosine(v, u)
        assert abs(cosine(u, v)) <= 1.0 + 1e-12
