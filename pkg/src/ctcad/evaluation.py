"""Stratified k-fold cross-validation, confusion metrics, and ROC/AUC.

The positive class (+1) is the finding being detected; accuracy,
precision, recall, and F1 follow the usual confusion-count definitions,
AUC comes from a trapezoid sweep over decision-value thresholds with
tied scores stepped simultaneously (equivalent to counting ties as 1/2
in pairwise comparison).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ctcad.svm import InfeasibleNu, NuSvmConfig, decision_values, train_nu_svm

METRIC_NAMES = ("accuracy", "recall", "precision", "f1", "auc")


class BadK(ValueError):
    """The requested fold count cannot be satisfied."""


class SingleClass(ValueError):
    """ROC needs both classes present."""


@dataclass(frozen=True)
class FoldAssignment:
    """fold_of[i] is the test fold for sample i."""

    fold_of: np.ndarray
    k: int

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, predicted, truth) -> "ConfusionCounts":
        predicted = np.asarray(predicted)
        truth = np.asarray(truth)
        return cls(
            tp=int(np.sum((predicted == 1) & (truth == 1))),
            fp=int(np.sum((predicted == 1) & (truth == -1))),
            tn=int(np.sum((predicted == -1) & (truth == -1))),
            fn=int(np.sum((predicted == -1) & (truth == 1))),
        )


@dataclass(frozen=True)
class MetricSet:
    """None marks a metric whose denominator was zero (undefined)."""

    accuracy: float | None
    recall: float | None
    precision: float | None
    f1: float | None
    auc: float | None = None

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}


@dataclass(frozen=True)
class CVReport:
    folds: tuple[MetricSet, ...]
    mean: MetricSet
    std: MetricSet
    k: int
    seed: int
    config: NuSvmConfig
    std_kind: str = "sample"
    curves: tuple = field(default=(), repr=False)  # per-fold ROC point arrays
    confusions: tuple[ConfusionCounts, ...] = field(default=(), repr=False)


def stratified_kfold(labels, k: int, seed: int = 0) -> FoldAssignment:
    """Deterministic stratified partition into k folds.

    Fold sizes differ by at most one overall and per class.  k must be
    between 2 and n; k = n with balanced classes degenerates to
    leave-one-out.
    """
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = y.shape[0]
    if not np.all(np.isin(y, (-1, 1))):
        raise ValueError("labels must be +1 or -1")
    if k < 2:
        raise BadK(f"k must be at least 2, got {k}")
    if k > n:
        raise BadK(f"k={k} exceeds the sample count {n}")

    classes = np.unique(y)
    y_enc = np.searchsorted(classes, y)
    # fold-by-class allocation from the sorted label sequence: slicing the
    # sorted labels with stride k balances both fold sizes and class counts
    y_order = np.sort(y_enc)
    allocation = np.array(
        [np.bincount(y_order[i::k], minlength=classes.shape[0]) for i in range(k)]
    )

    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=np.int64)
    for c in range(classes.shape[0]):
        idx = np.flatnonzero(y_enc == c)
        rng.shuffle(idx)
        start = 0
        for f in range(k):
            take = int(allocation[f, c])
            fold_of[idx[start : start + take]] = f
            start += take
    return FoldAssignment(fold_of=fold_of, k=k)


def metrics_from_confusion(c: ConfusionCounts) -> MetricSet:
    """Accuracy, precision, recall, F1 from counts; AUC excluded.

    A zero denominator yields None for that metric and F1 falls back
    to 0.
    """
    if c.total == 0:
        raise ValueError("confusion counts are all zero")
    accuracy = (c.tp + c.tn) / c.total
    precision = c.tp / (c.tp + c.fp) if (c.tp + c.fp) > 0 else None
    recall = c.tp / (c.tp + c.fn) if (c.tp + c.fn) > 0 else None
    if precision is None or recall is None or (precision + recall) == 0:
        f1 = 0.0
    else:
        # harmonic mean of precision and recall, in the exact count form
        f1 = 2.0 * c.tp / (2.0 * c.tp + c.fp + c.fn)
    return MetricSet(accuracy=accuracy, recall=recall, precision=precision, f1=f1)


def roc_auc(scores, truths) -> tuple[np.ndarray, float]:
    """ROC points (fpr, tpr) swept over distinct scores, and trapezoid AUC.

    Tied scores step simultaneously, so the area equals the
    Mann-Whitney pair statistic with ties counted as 1/2.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    t = np.asarray(truths, dtype=np.int64).reshape(-1)
    if s.shape != t.shape:
        raise ValueError("scores and truths must align")
    n_pos = int(np.sum(t == 1))
    n_neg = int(np.sum(t == -1))
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC requires both classes present")

    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    t_sorted = t[order]
    last_of_group = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    cum_tp = np.cumsum(t_sorted == 1)[last_of_group]
    cum_fp = np.cumsum(t_sorted == -1)[last_of_group]
    tpr = np.r_[0.0, cum_tp / n_pos]
    fpr = np.r_[0.0, cum_fp / n_neg]
    auc = float(np.trapezoid(tpr, fpr))
    return np.column_stack([fpr, tpr]), auc


def _aggregate(fold_metrics: list[MetricSet], ddof: int) -> tuple[MetricSet, MetricSet]:
    means = {}
    stds = {}
    for name in METRIC_NAMES:
        vals = [getattr(m, name) for m in fold_metrics if getattr(m, name) is not None]
        if not vals:
            means[name] = None
            stds[name] = None
            continue
        arr = np.asarray(vals, dtype=np.float64)
        means[name] = float(arr.mean())
        stds[name] = float(arr.std(ddof=ddof)) if arr.shape[0] > ddof else 0.0
    return MetricSet(**means), MetricSet(**stds)


def cross_validate(
    features,
    labels,
    cfg: NuSvmConfig,
    k: int = 10,
    seed: int = 0,
) -> CVReport:
    """Train on k-1 folds, score the held-out fold, aggregate mean +/- std.

    Labels are scored with the tie-break of predict_label (0 -> -1);
    AUC uses raw decision values.  An infeasible nu on some training
    split raises InfeasibleNu naming the offending fold.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("features and labels must align")
    counts = [int(np.sum(y == c)) for c in (-1, 1)]
    if k > min(counts):
        raise BadK(
            f"k={k} exceeds the smaller class count {min(counts)}; "
            "every test fold needs both classes"
        )

    assignment = stratified_kfold(y, k, seed)
    fold_metrics: list[MetricSet] = []
    curves = []
    confusions = []
    for f in range(k):
        train_idx = assignment.train_indices(f)
        test_idx = assignment.test_indices(f)
        try:
            model = train_nu_svm(X[train_idx], y[train_idx], cfg)
        except InfeasibleNu as exc:
            raise InfeasibleNu(f"fold {f}: {exc}") from exc
        scores = decision_values(model, X[test_idx])
        preds = np.where(scores > 0.0, 1, -1)
        confusion = ConfusionCounts.from_predictions(preds, y[test_idx])
        metrics = metrics_from_confusion(confusion)
        points, auc = roc_auc(scores, y[test_idx])
        fold_metrics.append(
            MetricSet(
                accuracy=metrics.accuracy,
                recall=metrics.recall,
                precision=metrics.precision,
                f1=metrics.f1,
                auc=auc,
            )
        )
        curves.append(points)
        confusions.append(confusion)

    mean, std = _aggregate(fold_metrics, ddof=1)
    return CVReport(
        folds=tuple(fold_metrics),
        mean=mean,
        std=std,
        k=k,
        seed=seed,
        config=cfg,
        curves=tuple(curves),
        confusions=tuple(confusions),
    )
