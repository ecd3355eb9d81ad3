"""ROC/AUC, confusion metrics and grouped k-fold cross-validation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

log = logging.getLogger(__name__)


def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isin(y, (-1, 1))):
        raise ValueError("labels must be +1 or -1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("AUC needs at least one positive and one negative label")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s, y


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney estimate of P(score_pos > score_neg), ties counted half."""
    s, y = _check(scores, labels)
    ranks = rankdata(s)  # average ranks for ties
    pos = y > 0
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class RocCurve:
    fpr: list[float]
    tpr: list[float]
    thresholds: list[float]

    def area(self) -> float:
        x, y = np.asarray(self.fpr), np.asarray(self.tpr)
        return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))

    def to_csv(self) -> str:
        lines = ["threshold,fpr,tpr"]
        for t, f, p in zip(self.thresholds, self.fpr, self.tpr):
            lines.append(f"{t!r},{f!r},{p!r}")
        return "\n".join(lines) + "\n"


def roc(scores: Sequence[float], labels: Sequence[int]) -> RocCurve:
    """Sweep the threshold down through every distinct score."""
    s, y = _check(scores, labels)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    n_pos, n_neg = int((y > 0).sum()), int((y < 0).sum())
    tp = np.cumsum(y > 0)
    fp = np.cumsum(y < 0)
    # last index of each run of equal scores
    ends = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    fpr = [0.0] + (fp[ends] / n_neg).tolist()
    tpr = [0.0] + (tp[ends] / n_pos).tolist()
    thresholds = [float("inf")] + s[ends].tolist()
    return RocCurve(fpr, tpr, thresholds)


def confusion(scores: Sequence[float], labels: Sequence[int], threshold: float = 0.0) -> dict:
    """Counts for predicting +1 when ``score >= threshold``.

    Rates whose denominator is zero are reported as ``None``.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    pred = s >= threshold
    tp = int(np.sum(pred & (y > 0)))
    fn = int(np.sum(~pred & (y > 0)))
    fp = int(np.sum(pred & (y < 0)))
    tn = int(np.sum(~pred & (y < 0)))
    return {
        "TP": tp,
        "TN": tn,
        "FP": fp,
        "FN": fn,
        "TPR": tp / (tp + fn) if tp + fn else None,
        "TNR": tn / (tn + fp) if tn + fp else None,
        "threshold": threshold,
    }


# -- cross-validation ---------------------------------------------------------


@dataclass
class FoldPlan:
    k: int
    assignment: dict[str, int]

    def folds(self) -> list[list[str]]:
        out: list[list[str]] = [[] for _ in range(self.k)]
        for g, f in sorted(self.assignment.items()):
            out[f].append(g)
        return out


def make_folds(group_ids: Sequence[str], k: int = 5, seed: int = 0) -> FoldPlan:
    """Assign source groups round-robin (after a seeded shuffle) to ``k`` folds."""
    groups = sorted(set(group_ids))
    if k < 2:
        raise ValueError("k must be at least 2")
    if len(groups) < k:
        raise ValueError(f"{len(groups)} source groups cannot fill {k} folds")
    perm = np.random.default_rng(seed).permutation(len(groups))
    return FoldPlan(k, {groups[j]: i % k for i, j in enumerate(perm)})


@dataclass
class KFoldResult:
    aucs: list[float]
    mean: float
    std: float
    plan: FoldPlan
    details: list[dict] = field(default_factory=list)


def kfold_run(dataset, k: int = 5, train_config=None, make_model: Callable | None = None,
              seed: int = 0, val_fraction: float = 0.1) -> KFoldResult:
    """Grouped k-fold: train on k-1 folds, report test AUC on the held-out fold.

    A ``val_fraction`` share of the training groups is held back for
    best-epoch selection. ``make_model()`` must return a fresh model.
    """
    from .s2v import TrainConfig, derive_seed, train

    if make_model is None:
        raise ValueError("kfold_run needs a make_model factory")
    train_config = train_config or TrainConfig()
    plan = make_folds(list(dataset.groups), k, seed)
    folds = plan.folds()
    aucs, details = [], []
    for i in range(k):
        test_groups = folds[i]
        rest = sorted(g for j, f in enumerate(folds) if j != i for g in f)
        rng = np.random.default_rng(derive_seed(seed, "kfold-val", i))
        n_val = max(2, int(round(val_fraction * len(rest))))  # dissimilar pairs need two groups
        perm = rng.permutation(len(rest))
        val_groups = [rest[j] for j in perm[:n_val]]
        train_groups = [rest[j] for j in perm[n_val:]]
        splits = (dataset.subset(train_groups), dataset.subset(val_groups), dataset.subset(test_groups))
        res = train(make_model(), dataset, train_config, splits=splits)
        aucs.append(res.test["auc"])
        details.append({"fold": i, "test_auc": res.test["auc"], "best_epoch": res.best_epoch,
                        "n_test_groups": len(test_groups)})
        log.info("fold %d/%d: test auc %.4f", i + 1, k, aucs[-1])
    arr = np.asarray(aucs)
    return KFoldResult(aucs, float(arr.mean()), float(arr.std()), plan, details)
