"""Metrics, ROC/AUC, repeated stratified cross-validation, aggregation.

Metric definitions follow the usual confusion-matrix forms; G-mean is
sqrt(recall * specificity). Any metric whose denominator is zero gets the
value 0 plus an entry in ``degenerate_flags`` - a 100-run sweep must not
crash on a pathological fold. AUC is the Mann-Whitney statistic (ties
count 0.5), computed from tie-averaged ranks; the trapezoidal area of
``roc_curve`` equals it to float precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import stratified_fold_indices
from .svm import SvmParams, decision_function, kkt_violations, predict, train_smo

METRIC_NAMES = ("accuracy", "precision", "recall", "f1", "gmean")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class MetricSet:
    accuracy: float
    precision: float
    recall: float
    f1: float
    gmean: float
    degenerate_flags: frozenset[str] = field(default_factory=frozenset)

    def value(self, name: str) -> float:
        return getattr(self, name)


@dataclass(frozen=True)
class RocCurve:
    points: tuple[tuple[float, float], ...]  # (fpr, tpr), monotone, (0,0)..(1,1)
    thresholds: tuple[float, ...]


@dataclass(frozen=True)
class RunResult:
    model_name: str
    run_index: int
    fold_metrics: tuple[MetricSet, ...]
    run_metrics: MetricSet
    pooled_scores: np.ndarray
    pooled_labels: np.ndarray


@dataclass(frozen=True)
class AggregateReport:
    model_name: str
    max: dict[str, float]
    mean: dict[str, float]
    std: dict[str, float]
    auc_final_run: float
    n_runs: int


def confusion(y_true, y_pred, positive: int = 1) -> ConfusionMatrix:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) != len(y_pred):
        raise ValueError(f"length mismatch: {len(y_true)} true vs {len(y_pred)} predicted")
    if len(y_true) == 0:
        raise ValueError("empty input")
    tp = int(np.sum((y_true == positive) & (y_pred == positive)))
    tn = int(np.sum((y_true != positive) & (y_pred != positive)))
    fp = int(np.sum((y_true != positive) & (y_pred == positive)))
    fn = int(np.sum((y_true == positive) & (y_pred != positive)))
    return ConfusionMatrix(tp=tp, tn=tn, fp=fp, fn=fn)


def _ratio(num: float, den: float, name: str, flags: set[str]) -> float:
    if den == 0:
        flags.add(name)
        return 0.0
    return num / den


def compute_metrics(cm: ConfusionMatrix) -> MetricSet:
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    flags: set[str] = set()
    accuracy = _ratio(cm.tp + cm.tn, cm.total, "accuracy", flags)
    precision = _ratio(cm.tp, cm.tp + cm.fp, "precision", flags)
    recall = _ratio(cm.tp, cm.tp + cm.fn, "recall", flags)
    f1 = _ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn, "f1", flags)
    specificity = _ratio(cm.tn, cm.tn + cm.fp, "gmean", flags)
    gmean = 0.0 if "gmean" in flags else math.sqrt(recall * specificity)
    return MetricSet(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        gmean=gmean,
        degenerate_flags=frozenset(flags),
    )


def sample_std(values) -> float:
    """sqrt(sum((x - mean)^2) / (w - 1)); needs at least two values."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or len(values) < 2:
        raise ValueError(f"sample std needs >= 2 values, got {values.shape}")
    shifted = values - values[0]  # exact zero deviations for constant input
    mean = shifted.mean()
    return math.sqrt(float(np.sum((shifted - mean) ** 2)) / (len(values) - 1))


def _check_roc_inputs(y_true, scores):
    y_true = np.asarray(y_true)
    scores = np.asarray(scores, dtype=np.float64)
    if len(y_true) != len(scores):
        raise ValueError(f"length mismatch: {len(y_true)} labels vs {len(scores)} scores")
    pos = y_true == 1
    n_pos = int(pos.sum())
    n_neg = len(y_true) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC/AUC needs both classes present")
    return pos, scores, n_pos, n_neg


def roc_curve(y_true, scores) -> RocCurve:
    """Threshold sweep over descending scores, ties collapsed to one point."""
    pos, scores, n_pos, n_neg = _check_roc_inputs(y_true, scores)
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    p_sorted = pos[order]
    points = [(0.0, 0.0)]
    thresholds = [math.inf]
    tp = fp = 0
    i = 0
    n = len(scores)
    while i < n:
        thr = s_sorted[i]
        while i < n and s_sorted[i] == thr:
            if p_sorted[i]:
                tp += 1
            else:
                fp += 1
            i += 1
        points.append((fp / n_neg, tp / n_pos))
        thresholds.append(float(thr))
    return RocCurve(points=tuple(points), thresholds=tuple(thresholds))


def auc(y_true, scores) -> float:
    """Mann-Whitney AUC via tie-averaged ranks; ties contribute 0.5."""
    pos, scores, n_pos, n_neg = _check_roc_inputs(y_true, scores)
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j < len(scores) and sorted_scores[j] == sorted_scores[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j - 1) + 1.0  # average 1-based rank
        i = j
    rank_sum_pos = float(ranks[pos].sum())
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def trapezoid_auc(curve: RocCurve) -> float:
    area = 0.0
    pts = curve.points
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def mean_metrics(metric_sets) -> MetricSet:
    """Unweighted mean per metric; degenerate flags are unioned."""
    metric_sets = list(metric_sets)
    if not metric_sets:
        raise ValueError("no metric sets to average")
    flags: frozenset[str] = frozenset()
    for ms in metric_sets:
        flags = flags | ms.degenerate_flags
    vals = {
        name: sum(ms.value(name) for ms in metric_sets) / len(metric_sets)
        for name in METRIC_NAMES
    }
    return MetricSet(degenerate_flags=flags, **vals)


def cross_validate(
    features: np.ndarray,
    labels: np.ndarray,
    params: SvmParams,
    k: int,
    seed: int,
    model_name: str = "",
    run_index: int = 0,
    audit_kkt: bool = False,
) -> RunResult:
    """One repeat of stratified k-fold CV over a feature matrix.

    ``labels`` are +1 (abnormal) / -1 (normal). Each fold trains on the
    other k-1 folds (standardizer fitted inside ``train_smo`` on training
    rows only) and is scored on the held-out rows; decision scores are
    pooled for ROC.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if len(X) != len(y):
        raise ValueError(f"{len(X)} feature rows vs {len(y)} labels")
    folds = stratified_fold_indices(y, k, seed)
    fold_metrics = []
    pooled_scores = np.empty(len(y), dtype=np.float64)
    for fold in range(k):
        test = folds == fold
        train = ~test
        try:
            model = train_smo(X[train], y[train], params)
            if audit_kkt:
                worst = float(kkt_violations(model, X[train], y[train], params).max())
                if worst > 10 * params.tolerance:
                    raise RuntimeError(f"KKT audit failed: worst violation {worst:.3g}")
            scores = decision_function(model, X[test])
            preds = predict(model, X[test])
        except Exception as exc:
            raise RuntimeError(f"fold {fold} (run {run_index}): {exc}") from exc
        pooled_scores[test] = scores
        fold_metrics.append(compute_metrics(confusion(y[test], preds, positive=1)))
    run_metrics = mean_metrics(fold_metrics)
    return RunResult(
        model_name=model_name,
        run_index=run_index,
        fold_metrics=tuple(fold_metrics),
        run_metrics=run_metrics,
        pooled_scores=pooled_scores,
        pooled_labels=np.asarray(y, dtype=np.int64).copy(),
    )


def aggregate(runs) -> AggregateReport:
    """Max / mean / sample-std per metric over run-level values."""
    runs = list(runs)
    if len(runs) < 2:
        raise ValueError(f"aggregation needs >= 2 runs, got {len(runs)}")
    names = {r.model_name for r in runs}
    if len(names) > 1:
        raise ValueError(f"runs mix models: {sorted(names)}")
    per_metric = {
        name: [r.run_metrics.value(name) for r in runs] for name in METRIC_NAMES
    }
    final = runs[-1]
    return AggregateReport(
        model_name=final.model_name,
        max={name: max(vals) for name, vals in per_metric.items()},
        mean={name: sum(vals) / len(vals) for name, vals in per_metric.items()},
        std={name: sample_std(vals) for name, vals in per_metric.items()},
        auc_final_run=auc(final.pooled_labels, final.pooled_scores),
        n_runs=len(runs),
    )
