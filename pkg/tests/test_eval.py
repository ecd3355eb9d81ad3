import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binsim.evaluation import auc, confusion, kfold_run, make_folds, roc
from helpers import grouped_dataset
from oracles import brute_auc


def _instance(seed, n_max=200):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, n_max + 1))
    y = rng.choice([-1, 1], size=n)
    y[0], y[1] = 1, -1
    s = np.round(rng.normal(size=n), int(rng.integers(0, 3)))  # rounding injects ties
    return s, y


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_auc_matches_pair_counting(seed):
    s, y = _instance(seed)
    assert abs(auc(s, y) - brute_auc(s.tolist(), y.tolist())) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_roc_area_and_symmetry(seed):
    s, y = _instance(seed)
    a = auc(s, y)
    curve = roc(s, y)
    assert abs(curve.area() - a) <= 1e-12
    assert (curve.fpr[0], curve.tpr[0]) == (0.0, 0.0) and (curve.fpr[-1], curve.tpr[-1]) == (1.0, 1.0)
    assert np.all(np.diff(curve.fpr) >= 0) and np.all(np.diff(curve.tpr) >= 0)
    assert abs(roc(-s, y).area() - (1.0 - a)) <= 1e-12
    assert abs(auc(s, y) + auc(-s, y) - 1.0) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_auc_invariant_under_monotone_map(seed):
    s, y = _instance(seed)
    assert auc(np.exp(s) * 3.0 + 1.0, y) == auc(s, y)
    assert auc(np.arctan(s), y) == auc(s, y)


def test_auc_examples():
    assert auc([0.9, 0.8, 0.1, 0.2], [1, 1, -1, -1]) == 1.0
    assert auc([0.5, 0.5], [1, -1]) == 0.5
    rng = np.random.default_rng(0)
    assert abs(auc(rng.random(20_000), rng.choice([-1, 1], 20_000)) - 0.5) < 0.02


def test_auc_errors():
    with pytest.raises(ValueError, match="positive and one negative"):
        auc([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 0])
    with pytest.raises(ValueError):
        auc([0.1], [1, -1])
    with pytest.raises(ValueError):
        roc([np.nan, 0.2], [1, -1])


def test_roc_csv():
    text = roc([0.9, 0.1], [1, -1]).to_csv().splitlines()
    assert text[0] == "threshold,fpr,tpr" and len(text) == 4


def test_confusion_cases():
    c = confusion([0.9, 0.7, -0.2, -0.8], [1, 1, -1, -1])
    assert (c["FP"], c["FN"], c["TP"], c["TN"]) == (0, 0, 2, 2)
    c = confusion([0.9, 0.7, -0.2, -0.8], [1, -1, 1, -1], threshold=0.5)
    assert (c["TP"], c["FP"], c["FN"], c["TN"]) == (1, 1, 1, 1)
    assert c["TPR"] == 0.5 and c["TNR"] == 0.5
    c = confusion([0.1, 0.2], [1, -1], threshold=2.0)
    assert c["TP"] == 0 and c["FP"] == 0
    only_pos = confusion([0.3, 0.4], [1, 1])
    assert only_pos["TNR"] is None and only_pos["TPR"] == 1.0


# -- folds ----------------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(0, 40), st.integers(0, 2**31))
def test_fold_partition(k, extra, seed):
    groups = [f"s{i}" for i in range(k + extra)]
    ids = groups * 3  # repeated members of each group
    plan = make_folds(ids, k, seed)
    folds = plan.folds()
    flat = [g for f in folds for g in f]
    assert sorted(flat) == sorted(groups)
    assert len(flat) == len(set(flat))
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    assert make_folds(ids, k, seed) == plan


def test_fold_examples_and_errors():
    plan = make_folds(["a", "b", "c", "d"], k=2, seed=3)
    assert [len(f) for f in plan.folds()] == [2, 2]
    with pytest.raises(ValueError):
        make_folds(["a", "b"], k=3)
    with pytest.raises(ValueError):
        make_folds(["a", "b"], k=1)


def test_kfold_run_small():
    from binsim.s2v import GraphEmbeddingModel, ModelConfig, TrainConfig
    from helpers import tiny_table

    ds = grouped_dataset(15, 2, seed=2, max_vertices=3)

    def make():
        return GraphEmbeddingModel.create(ModelConfig(extractor="mean", p=4, m=4), tiny_table(6, 1))

    runs = [kfold_run(ds, k=3, train_config=TrainConfig(epochs=1, batch_size=8), make_model=make, seed=1)
            for _ in range(2)]
    res = runs[0]
    assert len(res.aucs) == 3 and all(0.0 <= a <= 1.0 for a in res.aucs)
    assert res.mean == pytest.approx(np.mean(res.aucs)) and res.std == pytest.approx(np.std(res.aucs))
    assert runs[1].aucs == res.aucs
    with pytest.raises(ValueError):
        kfold_run(ds, k=3)
