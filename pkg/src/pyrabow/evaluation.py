"""Metrics, stratified cross-validation and configuration sweeps."""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .config import PipelineConfig
from .dataset import DatasetIndex, stratified_fold_labels, stratified_split
from .pipeline import ArtifactCache, fit_pipeline, load_descriptors

log = logging.getLogger(__name__)


class EvaluationError(ValueError):
    pass


def accuracy(pred, truth) -> float:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if len(pred) != len(truth):
        raise EvaluationError(f"{len(pred)} predictions for {len(truth)} labels")
    if len(truth) == 0:
        raise EvaluationError("accuracy of an empty prediction set is undefined")
    return float(np.mean(pred == truth))


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows: true class, columns: predicted class

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total)

    def to_csv(self, class_names) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\predicted"] + list(class_names))
        for name, row in zip(class_names, self.counts):
            w.writerow([name] + [int(v) for v in row])
        return buf.getvalue()


def confusion(pred, truth, num_classes: int) -> ConfusionMatrix:
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if len(pred) != len(truth):
        raise EvaluationError(f"{len(pred)} predictions for {len(truth)} labels")
    for name, arr in (("prediction", pred), ("label", truth)):
        if len(arr) and (arr.min() < 0 or arr.max() >= num_classes):
            raise EvaluationError(f"{name} outside [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (truth, pred), 1)
    return ConfusionMatrix(counts)


def roc_auc(scores, truth, class_id: int):
    """One-vs-rest ROC curve and trapezoidal AUC for ``class_id``.

    ``scores`` is either the per-class score matrix or the score column of
    ``class_id``. Equal scores are swept as one threshold group. Returns
    ``(points, auc)`` with points as ``(threshold, fpr, tpr)`` rows.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim == 2:
        s = s[:, class_id]
    pos = np.asarray(truth) == class_id
    P, N = int(pos.sum()), int((~pos).sum())
    if P == 0 or N == 0:
        raise EvaluationError(f"ROC for class {class_id} needs both positive and negative samples")
    order = np.argsort(-s, kind="stable")
    s, pos = s[order], pos[order]
    points = [(math.inf, 0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:
            j += 1
        tp += int(pos[i:j].sum())
        fp += int((~pos[i:j]).sum())
        points.append((float(s[i]), fp / N, tp / P))
        i = j
    pts = np.asarray(points)
    auc = float(np.sum((pts[1:, 1] - pts[:-1, 1]) * (pts[1:, 2] + pts[:-1, 2]) / 2.0))
    return pts, auc


@dataclass
class CvReport:
    fold_accuracies: list[float]
    fingerprint: str = ""
    protocol: str = "cv"
    predictions: np.ndarray | None = field(default=None, repr=False)
    scores: np.ndarray | None = field(default=None, repr=False)

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def std(self) -> float:
        """Population standard deviation over folds."""
        return float(np.std(self.fold_accuracies))

    def to_json(self) -> dict:
        return {"protocol": self.protocol, "fingerprint": self.fingerprint,
                "fold_accuracies": self.fold_accuracies, "mean": self.mean,
                "std": self.std, "std_kind": "population"}


def cross_validate_folds(labels, k: int, seed: int,
                         fit_predict: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]],
                         num_classes: int | None = None) -> CvReport:
    """Generic stratified k-fold loop.

    ``fit_predict(train_positions, test_positions)`` must fit using the
    training positions only and return ``(predictions, scores)`` for the test
    positions.
    """
    labels = np.asarray(labels, dtype=np.int64)
    folds = stratified_fold_labels(labels, k, seed)
    nc = num_classes or int(labels.max()) + 1
    preds = np.full(len(labels), -1, dtype=np.int64)
    scores = np.full((len(labels), nc), np.nan)
    accs = []
    for f in range(k):
        train, test = folds.train_test(f)
        p, s = fit_predict(train, test)
        preds[test] = p
        if s is not None:
            scores[test] = s
        accs.append(accuracy(p, labels[test]))
    return CvReport(accs, predictions=preds, scores=scores)


def cross_validate(cfg: PipelineConfig, index: DatasetIndex, k: int | None = None,
                   seed: int | None = None, descriptors=None, cache: ArtifactCache | None = None,
                   cache_dir=None, threads: int = 1) -> CvReport:
    """Stratified k-fold accuracy of the configured pipeline.

    Codebook, GMM, scaler, PCA and classifier are refit inside every fold on
    that fold's training portion.
    """
    k = cfg.eval.folds if k is None else k
    seed = cfg.eval.seed if seed is None else seed
    if descriptors is None:
        descriptors = load_descriptors(index, cfg, cache_dir, threads)
    labels = index.labels

    def fit_predict(train, test):
        fitted = fit_pipeline(cfg, [descriptors[i] for i in train], labels[train], index.classes,
                              cache=cache, train_key=("cv", k, seed, train.tolist()))
        return fitted.predict([descriptors[i] for i in test])

    report = cross_validate_folds(labels, k, seed, fit_predict, len(index.classes))
    report.fingerprint = cfg.fingerprint()
    return report


def holdout(cfg: PipelineConfig, index: DatasetIndex, descriptors=None,
            cache: ArtifactCache | None = None, cache_dir=None, threads: int = 1):
    """Fit on the stratified training split, evaluate on the test split.

    Returns ``(report, fitted, test_index, predictions, scores)``.
    """
    if descriptors is None:
        descriptors = load_descriptors(index, cfg, cache_dir, threads)
    train_idx, test_idx = _split_positions(index, cfg.dataset.train_fraction, cfg.dataset.split_seed)
    labels = index.labels
    fitted = fit_pipeline(cfg, [descriptors[i] for i in train_idx], labels[train_idx], index.classes,
                          cache=cache, train_key=("holdout", train_idx.tolist()))
    pred, scores = fitted.predict([descriptors[i] for i in test_idx])
    report = CvReport([accuracy(pred, labels[test_idx])], cfg.fingerprint(), "holdout", pred, scores)
    return report, fitted, test_idx, pred, scores


def _split_positions(index: DatasetIndex, fraction: float, seed: int):
    train, test = stratified_split(index, fraction, seed)
    pos = {r.path: i for i, r in enumerate(index.records)}
    return (np.array([pos[r.path] for r in train.records], dtype=np.int64),
            np.array([pos[r.path] for r in test.records], dtype=np.int64))


# ---------------------------------------------------------------- sweeps

@dataclass
class SweepGrid:
    axes: dict[str, list]

    def __post_init__(self):
        if not self.axes:
            raise EvaluationError("sweep grid has no axes")
        for name, values in self.axes.items():
            if not isinstance(values, list) or not values:
                raise EvaluationError(f"sweep axis {name!r} needs a non-empty list of values")

    def points(self) -> list[dict]:
        names = list(self.axes)
        return [dict(zip(names, combo)) for combo in itertools.product(*(self.axes[n] for n in names))]


@dataclass
class SweepRow:
    point: dict
    mean: float
    std: float
    folds: list[float]
    protocol: str
    error: str = ""


def sweep(grid: SweepGrid, base: PipelineConfig, index: DatasetIndex, protocol: str | None = None,
          cache_dir=None, threads: int = 1, cache: ArtifactCache | None = None) -> list[SweepRow]:
    """Evaluate every grid point; rows sorted by mean accuracy, best first.

    Descriptors are shared by all points with the same feature settings and
    codebooks by all points with the same feature and codebook settings. A
    failing point yields an error row instead of aborting the sweep.
    """
    protocol = protocol or base.eval.protocol
    cache = cache or ArtifactCache()
    descriptor_sets = {}
    rows = []
    for point in grid.points():
        try:
            cfg = base.with_overrides(point)
            fkey = cfg.fingerprint("features")
            if fkey not in descriptor_sets:
                descriptor_sets[fkey] = load_descriptors(index, cfg, cache_dir, threads)
            desc = descriptor_sets[fkey]
            if protocol == "cv":
                rep = cross_validate(cfg, index, descriptors=desc, cache=cache)
            else:
                rep = holdout(cfg, index, descriptors=desc, cache=cache)[0]
            rows.append(SweepRow(point, rep.mean, rep.std, rep.fold_accuracies, protocol))
        except Exception as exc:  # recorded per point; the sweep goes on
            log.warning("sweep point %s failed: %s", point, exc)
            rows.append(SweepRow(point, math.nan, math.nan, [], protocol, f"{type(exc).__name__}: {exc}"))
    order = sorted(range(len(rows)),
                   key=lambda i: (math.isnan(rows[i].mean), -rows[i].mean if not math.isnan(rows[i].mean) else 0.0, i))
    return [rows[i] for i in order]


def sweep_to_csv(rows: Sequence[SweepRow], axes: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(axes) + ["protocol", "mean", "std", "folds", "error"])
    for r in rows:
        w.writerow([json.dumps(r.point[a]) for a in axes]
                   + [r.protocol, repr(r.mean), repr(r.std),
                      " ".join(repr(f) for f in r.folds), r.error])
    return buf.getvalue()


def sweep_to_json(rows: Sequence[SweepRow]) -> list[dict]:
    return [{"point": r.point, "protocol": r.protocol,
             "mean": None if math.isnan(r.mean) else r.mean,
             "std": None if math.isnan(r.std) else r.std,
             "folds": r.folds, "error": r.error} for r in rows]


def roc_to_csv(points_by_class: dict[str, tuple[np.ndarray, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "threshold", "fpr", "tpr", "auc"])
    for name, (pts, auc) in points_by_class.items():
        for t, fpr, tpr in pts:
            w.writerow([name, repr(float(t)), repr(float(fpr)), repr(float(tpr)), repr(auc)])
    return buf.getvalue()
