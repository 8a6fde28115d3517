"""Classification, ranking and regression metrics plus a PCA projection."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import LabelError, MetricError


@dataclass(eq=False)
class ClassificationReport:
    classes: tuple
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: dict
    confusion: np.ndarray  # rows true, columns predicted
    zero_prediction_classes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "classes": [str(c) for c in self.classes],
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_class": {str(k): v for k, v in self.per_class.items()},
            "confusion": self.confusion.tolist(),
            "zero_prediction_classes": [str(c) for c in self.zero_prediction_classes],
        }

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred"] + [str(c) for c in self.classes])
        for c, row in zip(self.classes, self.confusion):
            w.writerow([str(c)] + [int(v) for v in row])
        return buf.getvalue()


def classification_metrics(y_true: Sequence, y_pred: Sequence, classes: Sequence | None = None) -> ClassificationReport:
    """Accuracy, macro precision/recall/F1 and the confusion matrix.

    A class never predicted gets precision 0 and is listed in
    ``zero_prediction_classes``.
    """
    y_true, y_pred = list(y_true), list(y_pred)
    if len(y_true) != len(y_pred) or not y_true:
        raise ValueError("label sequences must be nonempty and of equal length")
    if classes is None:
        classes = list(dict.fromkeys(y_true + y_pred))
    classes = tuple(classes)
    index = {c: i for i, c in enumerate(classes)}
    for lab in y_true + y_pred:
        if lab not in index:
            raise LabelError(f"label {lab!r} outside the known class set")
    k = len(classes)
    cm = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        cm[index[t], index[p]] += 1
    per_class = {}
    zero_pred = []
    precisions, recalls, f1s = [], [], []
    for i, c in enumerate(classes):
        tp = cm[i, i]
        predicted = cm[:, i].sum()
        support = cm[i].sum()
        if predicted == 0:
            zero_pred.append(c)
        prec = tp / predicted if predicted else 0.0
        rec = tp / support if support else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
        per_class[c] = {"precision": float(prec), "recall": float(rec), "f1": float(f1),
                        "support": int(support)}
        precisions.append(prec)
        recalls.append(rec)
        f1s.append(f1)
    return ClassificationReport(
        classes, float(np.trace(cm) / cm.sum()), float(np.mean(precisions)),
        float(np.mean(recalls)), float(np.mean(f1s)), per_class, cm, zero_pred,
    )


def average_ranks(values) -> np.ndarray:
    """1-based ranks with ties sharing their mean rank."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def binary_auc(scores, positive_mask) -> float:
    """Mann-Whitney AUC; tied positive/negative pairs count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positive_mask, dtype=bool)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs at least one positive and one negative")
    r = average_ranks(scores)
    return float((r[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass(eq=False)
class AUCReport:
    macro: float
    per_class: dict
    skipped: list


def roc_auc_ovr(y_true: Sequence, scores, classes: Sequence) -> AUCReport:
    """One-vs-rest AUC per class (higher score = more likely) and their mean."""
    scores = np.asarray(scores, dtype=np.float64)
    y_true = np.asarray(list(y_true), dtype=object)
    classes = list(classes)
    if scores.shape != (len(y_true), len(classes)):
        raise ValueError(f"score matrix shape {scores.shape} != ({len(y_true)}, {len(classes)})")
    if not np.all(np.isfinite(scores)):
        raise MetricError("scores must be finite")
    per_class, skipped = {}, []
    for k, c in enumerate(classes):
        pos = y_true == c
        if pos.all() or not pos.any():
            skipped.append(c)
            continue
        per_class[c] = binary_auc(scores[:, k], pos)
    if not per_class:
        raise MetricError("no class has both positive and negative samples")
    return AUCReport(float(np.mean(list(per_class.values()))), per_class, skipped)


@dataclass(eq=False)
class RegressionReport:
    rmse: float
    r_squared: float
    rmse_ci: tuple[float, float]
    error_matrix: np.ndarray

    def to_dict(self) -> dict:
        return {"rmse": self.rmse, "r_squared": self.r_squared,
                "rmse_ci": list(self.rmse_ci), "error_matrix": self.error_matrix.tolist()}


def regression_metrics(pred, truth, B: int = 100, seed: int = 0) -> RegressionReport:
    """RMSE, R^2 about the truth mean, and an entry-bootstrap 95% RMSE interval."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shapes differ: {pred.shape} vs {truth.shape}")
    err = pred - truth
    flat_err = err.ravel()
    ss_res = float((flat_err ** 2).sum())
    ss_tot = float(((truth - truth.mean()) ** 2).sum())
    if ss_tot == 0:
        raise MetricError("R^2 undefined for zero-variance truth")
    rmse = float(np.sqrt(ss_res / flat_err.size))
    rng = np.random.default_rng(seed)
    boots = np.empty(B)
    for b in range(B):
        idx = rng.integers(0, flat_err.size, size=flat_err.size)
        boots[b] = np.sqrt(np.mean(flat_err[idx] ** 2))
    lo, hi = (np.percentile(boots, [2.5, 97.5]) if B > 0 else (rmse, rmse))
    return RegressionReport(rmse, 1.0 - ss_res / ss_tot, (float(lo), float(hi)), err)


@dataclass(eq=False)
class Projection:
    coords: np.ndarray
    axes: np.ndarray
    padded_dims: int


def pca_project(points, dims: int = 2) -> Projection:
    """Project centered points onto their top principal axes.

    Each axis is signed so its largest-magnitude loading is positive. When
    the data has rank below ``dims`` the missing coordinates are zero and
    ``padded_dims`` records how many.
    """
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if len(x) < dims:
        raise ValueError(f"need at least {dims} points")
    xc = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    tol = max(x.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int((s > tol).sum()) if s.size else 0
    use = min(dims, rank)
    axes = np.zeros((dims, x.shape[1]))
    for k in range(use):
        v = vt[k]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        axes[k] = v
    coords = xc @ axes.T
    coords[:, use:] = 0.0
    return Projection(coords, axes, dims - use)
