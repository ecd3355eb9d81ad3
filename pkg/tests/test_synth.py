import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binsim.cfg import cfg_tokens
from binsim.synth import (
    ISA,
    VariantConfig,
    gen_dataset,
    gen_function,
    gen_variant,
    instruction_multiset,
    merge_blocks,
    source_id_for,
    split_blocks,
    substitute,
)

ZERO = VariantConfig(substitute=0, rename=0, nop=0, split=0, merge=0)


def test_same_seed_same_function():
    assert gen_function(17) == gen_function(17)
    assert gen_function(17) != gen_function(18)
    assert gen_function(17).source_id == source_id_for(17)


def test_size_bounds_over_many_seeds():
    for seed in range(1000):
        g = gen_function(seed)
        assert 3 <= len(g.vertices) <= 40
        assert all(2 <= len(v.real_instructions) <= 30 for v in g.vertices)
        out = g.successors()
        assert all(len(set(s)) <= 2 for s in out.values())
        assert g.vertices[0].real_instructions[0].mnemonic == "xor"


def test_substitution_classes_are_class_preserving():
    classes = ISA.classes()
    for cls in ISA.substitutions:
        assert len({classes[m] for m, _ in cls}) == 1
    mnemonics = set(classes)
    assert 35 <= len(mnemonics) <= 50 and len(ISA.registers) == 8


def test_substitute_is_symmetric():
    rng = np.random.default_rng(0)
    from binsim.cfg import RawInstruction

    for cls in ISA.substitutions:
        members = {(m, tuple("r3" if o == "R" else "0x10" if o == "T" else o for o in ops)) for m, ops in cls}
        for m, ops in members:
            for _ in range(20):
                out = substitute(RawInstruction(m, ops), rng)
                assert (out.mnemonic, out.operands) in members - {(m, ops)}


def test_zero_config_is_identity_up_to_tag():
    base = gen_function(5)
    var = gen_variant(base, ZERO, tag="other-cc")
    assert var.compiler == "other-cc"
    assert var.vertices == base.vertices and var.edges == base.edges and var.source_id == base.source_id


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 1), st.floats(0, 1))
def test_split_merge_preserves_multiset(seed, ps, pm):
    base = gen_function(seed)
    rng = np.random.default_rng(seed)
    out = merge_blocks(split_blocks(base, ps, rng), pm, rng)
    assert instruction_multiset(out) == instruction_multiset(base)
    assert out.vertices[0].id == base.vertices[0].id


def test_full_substitution_changes_tokens():
    base = gen_function(0)
    var = gen_variant(base, VariantConfig(substitute=1.0, rename=0, nop=0, split=0, merge=0))
    assert cfg_tokens(var) != cfg_tokens(base)


def test_nop_only_variant_keeps_multiset():
    base = gen_function(3)
    var = gen_variant(base, VariantConfig(substitute=0, rename=0, nop=0.5, split=0.5, merge=0.5, seed=2))
    assert instruction_multiset(var) == instruction_multiset(base)
    assert instruction_multiset(var, ignore_nops=False) != instruction_multiset(base, ignore_nops=False)


def test_config_validation():
    with pytest.raises(ValueError):
        VariantConfig(split=1.5)


def test_dataset_shape():
    ds, corpus = gen_dataset(500, 4, seed=0)
    assert len(ds) == 2000 and len(ds.groups) == 500
    assert all(len(m) == 4 for m in ds.groups.values())
    assert len(corpus) == len(ds)
    again, _ = gen_dataset(500, 4, seed=0)
    assert again == ds


def _jaccard(a, b):
    a, b = set(a), set(b)
    return len(a & b) / len(a | b)


def test_variants_share_more_tokens_than_strangers():
    ds, corpus = gen_dataset(60, 3, seed=4)
    toks = {c.id: set(t) for c, t in zip(ds, corpus)}
    groups = list(ds.groups.values())
    within = [_jaccard(toks[m[0].id], toks[m[1].id]) for m in groups]
    across = [_jaccard(toks[groups[i][0].id], toks[groups[i + 1][0].id]) for i in range(len(groups) - 1)]
    assert np.mean(within) > np.mean(across) + 0.2
