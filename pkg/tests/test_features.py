import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binsim import nn
from binsim.cfg import CFG, RawInstruction, Vertex, pad_or_truncate
from binsim.features import (
    AttentionParams,
    GruParams,
    InstructionClassTable,
    VertexBatch,
    attention_features,
    betweenness,
    i2v_attention,
    i2v_mean,
    i2v_rnn,
    mean_features,
    mfe_features,
    rnn_features,
)
from helpers import TINY_TOKENS, random_cfg, tiny_table
from oracles import brute_betweenness


def graph(n, edges, body=None):
    body = body or [RawInstruction("nop")]
    return CFG("g", "s", "c", "SYNTH", "O0", tuple(Vertex.of(i, body) for i in range(n)), tuple(edges))


def toks(*names):
    return Vertex.of(0, [RawInstruction(t.split(" ")[0], tuple(t.split(" ")[1].split(",")) if " " in t else ())
                         for t in names])


# -- MFE ------------------------------------------------------------------------


def test_mfe_direct_count():
    v = Vertex.of(0, [
        RawInstruction("mov", ("r0", "r1"), num_consts=1),
        RawInstruction("add", ("r0", "r2")),
        RawInstruction("call", ("memcpy",)),
    ])
    cfg = CFG("g", "s", "c", "SYNTH", "O0", (v,), ())
    fm = mfe_features(cfg)
    assert fm.values.shape == (1, 8)
    assert fm.values[0].tolist() == [1, 0, 1, 1, 3, 1, 0, 0]


def test_mfe_pad_excluded_and_unannotated_consts():
    v = pad_or_truncate(Vertex.of(0, [RawInstruction("add", ("r0", "5")), RawInstruction("mov", ("r1", "0x10"))]), 6)
    cfg = CFG("g", "s", "c", "SYNTH", "O0", (v,), ())
    row = mfe_features(cfg).values[0]
    assert row[4] == 2  # instructions
    assert row[0] == 2  # two literal operands


def test_mfe_class_tag_overrides_table():
    v = Vertex.of(0, [RawInstruction("weird", (), class_tag="arith")])
    row = mfe_features(CFG("g", "s", "c", "AMD64", "O0", (v,), ())).values[0]
    assert row[5] == 1 and row[2] == 0


def test_class_table_is_total():
    t = InstructionClassTable.default()
    assert t.classify("SYNTH", "mov") == "transfer"
    assert t.classify("SYNTH", "no-such-op") == "other"
    assert t.classify("MIPS", "add") == "other"
    assert t.classify("AMD64", "MOV") == "transfer"


def test_class_table_from_file(tmp_path):
    path = tmp_path / "classes.json"
    path.write_text(json.dumps({"SYNTH": {"frob": "call"}}))
    t = InstructionClassTable.from_file(path)
    assert t.classify("SYNTH", "frob") == "call"


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_mfe_counts_are_additive(seed):
    rng = np.random.default_rng(seed)
    a = random_cfg(rng, max_vertices=1).vertices[0]
    b = random_cfg(rng, max_vertices=1).vertices[0]
    ab = Vertex.of(0, a.real_instructions + b.real_instructions)

    def six(v):
        return mfe_features(CFG("g", "s", "c", "SYNTH", "O0", (v,), ())).values[0, :6]

    assert np.array_equal(six(ab), six(a) + six(b))


def test_isolated_vertex_and_offspring():
    row = mfe_features(graph(1, [])).values[0]
    assert row[6] == 0 and row[7] == 0
    fm = mfe_features(graph(3, [(0, 1), (0, 2), (0, 1), (1, 1)])).values
    assert fm[:, 6].tolist() == [2, 1, 0]


def test_drop_betweenness_flag():
    assert mfe_features(graph(2, [(0, 1)]), drop_betweenness=True).values.shape == (2, 7)


# -- betweenness ----------------------------------------------------------------


def test_path_and_complete_graph():
    assert betweenness(graph(3, [(0, 1), (1, 2)])).tolist() == [0, 1, 0]
    complete = [(a, b) for a in range(3) for b in range(3) if a != b]
    assert betweenness(graph(3, complete)).tolist() == [0, 0, 0]


def test_exact_mode_returns_rationals():
    # two parallel shortest routes 0->1->3 and 0->2->3
    out = betweenness(graph(4, [(0, 1), (0, 2), (1, 3), (2, 3)]), exact=True)
    assert out == [0, Fraction(1, 2), Fraction(1, 2), 0]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1), st.floats(0.05, 0.7))
def test_brandes_matches_enumeration(n, seed, density):
    rng = np.random.default_rng(seed)
    edges = [(a, b) for a in range(n) for b in range(n) if rng.random() < density]
    g = graph(n, edges)
    ref = brute_betweenness(n, edges)
    assert betweenness(g, exact=True) == ref
    np.testing.assert_allclose(betweenness(g), [float(x) for x in ref], rtol=0, atol=1e-12)


def test_betweenness_relabel_equivariant():
    rng = np.random.default_rng(5)
    edges = [(a, b) for a in range(6) for b in range(6) if rng.random() < 0.3]
    perm = rng.permutation(6)
    g1 = graph(6, edges)
    g2 = graph(6, [(int(perm[a]), int(perm[b])) for a, b in edges])
    b1, b2 = betweenness(g1, exact=True), betweenness(g2, exact=True)
    assert [b2[int(perm[i])] for i in range(6)] == b1


# -- i2v extractors ---------------------------------------------------------------


def test_mean_examples():
    table = tiny_table()
    u, v = table.vectors[table.id("mov r0,r1")], table.vectors[table.id("ret")]
    np.testing.assert_allclose(i2v_mean(toks("mov r0,r1", "ret"), table), (u + v) / 2, rtol=0, atol=1e-15)
    assert np.array_equal(i2v_mean(toks("ret"), table), v)
    assert not i2v_mean(Vertex.of(0, []), table).any()
    assert not i2v_mean(pad_or_truncate(Vertex.of(0, []), 4), table, fixed_len=4).any()


def test_mean_ignores_padding_and_order():
    table = tiny_table()
    v = toks("mov r0,r1", "ret", "add r0,1")
    padded = pad_or_truncate(v, 8)
    np.testing.assert_array_equal(i2v_mean(v, table, fixed_len=8), i2v_mean(padded, table, fixed_len=8))
    shuffled = toks("add r0,1", "mov r0,r1", "ret")
    np.testing.assert_allclose(i2v_mean(v, table), i2v_mean(shuffled, table), rtol=0, atol=1e-15)


def test_attention_examples():
    table = tiny_table()
    v = toks("mov r0,r1", "ret", "add r0,1")
    ones = AttentionParams.uniform(4)
    np.testing.assert_allclose(i2v_attention(v, table, ones), i2v_mean(v, table), rtol=0, atol=1e-12)
    hot = AttentionParams(nn.Tensor(np.array([[0.0], [1.0], [0.0], [0.0]]), requires_grad=True))
    assert np.array_equal(i2v_attention(v, table, hot), table.vectors[table.id("ret")])
    zero = AttentionParams(nn.Tensor(np.array([[1.0], [-1.0], [0.0], [5.0]])))
    with pytest.raises(nn.NumericalError):
        i2v_attention(toks("mov r0,r1", "ret"), table, zero)


def test_attention_and_rnn_are_order_sensitive():
    table = tiny_table()
    a = AttentionParams(nn.Tensor(np.array([[2.0], [0.5], [1.0]])))
    v1, v2 = toks("mov r0,r1", "ret", "add r0,1"), toks("ret", "mov r0,r1", "add r0,1")
    assert not np.allclose(i2v_attention(v1, table, a), i2v_attention(v2, table, a))
    gru = GruParams.init(6, 6, 3, seed=1)
    assert not np.allclose(i2v_rnn(v1, table, gru), i2v_rnn(v2, table, gru))


def test_attention_gradient_wrt_weights_and_embeddings():
    table = tiny_table()
    E = nn.Tensor(table.vectors.copy(), requires_grad=True)
    a = nn.Tensor(np.array([[1.3], [0.7], [1.1], [0.9]]), requires_grad=True)
    batch = VertexBatch([[2, 3, 6], [4], [5, 5, 2, 7]], 4)
    w = np.random.default_rng(0).normal(size=(3, 6))

    def loss():
        x = attention_features(batch, E, a)
        return nn.sum_rows(nn.transpose(nn.sum_rows(nn.mul(x, w))))

    assert nn.check_tensor_grads(loss, [a, E], eps=1e-4, order=4) <= 1e-4


def test_rnn_zero_weights_and_single_step():
    table = tiny_table()
    gru = GruParams.init(6, 6, 3, seed=0)
    for layer in gru.layers:
        for t in layer.values():
            t.data[...] = 0.0
    assert not i2v_rnn(toks("mov r0,r1", "ret"), table, gru).any()

    gru = GruParams.init(6, 6, 1, seed=2)
    x = table.vectors[table.id("ret")]
    L = {k: t.data for k, t in gru.layers[0].items()}
    sig = lambda z: 1 / (1 + np.exp(-z))  # noqa: E731
    z = sig(x @ L["Wz"] + L["bz"])
    n = np.tanh(x @ L["Wn"] + L["bn"])
    expected = ((1 - z) * n).reshape(-1)
    np.testing.assert_allclose(i2v_rnn(toks("ret"), table, gru), expected, rtol=0, atol=1e-14)


def test_rnn_ignores_padding_and_empty_vertex():
    table = tiny_table()
    gru = GruParams.init(6, 6, 3, seed=3)
    v = toks("mov r0,r1", "ret")
    np.testing.assert_array_equal(i2v_rnn(v, table, gru, fixed_len=2), i2v_rnn(pad_or_truncate(v, 6), table, gru, fixed_len=6))
    assert not i2v_rnn(Vertex.of(0, []), table, gru).any()


def test_rnn_gradients_three_steps():
    table = tiny_table()
    E = nn.Tensor(table.vectors.copy(), requires_grad=True)
    gru = GruParams.init(6, 6, 3, seed=4)
    for layer in gru.layers:
        for k in ("bz", "br", "bn"):
            layer[k].data[...] = np.random.default_rng(9).normal(0, 0.3, layer[k].shape)
    batch = VertexBatch([[2, 3, 6], [4], [5, 2]], 3)
    w = np.random.default_rng(1).normal(size=(3, 6))

    def loss():
        return nn.sum_rows(nn.transpose(nn.sum_rows(nn.mul(rnn_features(batch, E, gru), w))))

    params = [t for _, t in gru.tensors()] + [E]
    assert nn.check_tensor_grads(loss, params, eps=1e-4, order=4) <= 1e-4


def test_gru_validation():
    gru = GruParams.init(6, 4, 2)
    assert gru.hidden == 4 and gru.input_dim == 6
    gru.layers[1]["Wz"] = nn.Tensor(np.zeros((3, 4)))
    with pytest.raises(nn.ShapeError):
        gru.validate()


def test_batched_matches_single_vertex():
    table = tiny_table()
    E = nn.Tensor(table.vectors)
    ids = [[table.id(t) for t in TINY_TOKENS[2:5]], [table.id("ret")], []]
    batch = VertexBatch(ids, 5)
    out = mean_features(batch, E).data
    assert batch.degenerate == 1
    np.testing.assert_allclose(out[0], table.vectors[ids[0]].mean(axis=0), rtol=0, atol=1e-15)
    assert not out[2].any()
