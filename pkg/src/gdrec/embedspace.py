"""Genetic-distance rows as a representation space.

A species is represented by its vector of genetic distances to a fixed set
of reference columns. Predicted vectors are mapped back to species by the
nearest reference row under a chosen metric.
"""
from __future__ import annotations

import csv
import enum
import io
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateVectorError, KMeansConfigError, ReferenceMismatchError
from .gendist import DistanceMatrix


class MetricTag(str, enum.Enum):
    COSINE = "COSINE"
    EUCLIDEAN = "EUCLIDEAN"
    MANHATTAN = "MANHATTAN"
    CORRELATION = "CORRELATION"


class PredictionClampWarning(UserWarning):
    """A negative predicted distance was clamped to zero."""


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """Rows are species, columns are reference entries (``L >= N`` allowed)."""

    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    values: np.ndarray
    transformed: bool = False

    def __post_init__(self):
        rows, cols = tuple(self.row_labels), tuple(self.col_labels)
        vals = np.array(self.values, dtype=np.float64)
        object.__setattr__(self, "row_labels", rows)
        object.__setattr__(self, "col_labels", cols)
        object.__setattr__(self, "values", vals)
        if vals.shape != (len(rows), len(cols)):
            raise ValueError(f"values shape {vals.shape} != ({len(rows)}, {len(cols)})")
        if len(set(rows)) != len(rows):
            raise ValueError("duplicate row labels")
        if not np.all(np.isfinite(vals)):
            raise ValueError("embedding entries must be finite")
        if not self.transformed:
            if np.any(vals < 0):
                raise ValueError("distance embeddings must be >= 0")
            for i, lab in enumerate(rows):
                for j, col in enumerate(cols):
                    if col == lab and vals[i, j] != 0:
                        raise ValueError(f"self-distance of {lab!r} is not zero")

    @property
    def n_rows(self) -> int:
        return len(self.row_labels)

    @property
    def length(self) -> int:
        return len(self.col_labels)

    def row(self, label: str) -> np.ndarray:
        return self.values[self.row_labels.index(label)]

    def self_column(self, label: str) -> int | None:
        try:
            return self.col_labels.index(label)
        except ValueError:
            return None

    def rows(self, labels: Sequence[str]) -> "EmbeddingMatrix":
        idx = [self.row_labels.index(lab) for lab in labels]
        return EmbeddingMatrix(tuple(labels), self.col_labels, self.values[idx], self.transformed)

    def columns(self, cols: Sequence[str]) -> "EmbeddingMatrix":
        idx = [self.col_labels.index(c) for c in cols]
        return EmbeddingMatrix(self.row_labels, tuple(cols), self.values[:, idx], self.transformed)

    @classmethod
    def from_distance_matrix(
        cls,
        dm: DistanceMatrix,
        rows: Sequence[str] | None = None,
        columns: Sequence[str] | None = None,
    ) -> "EmbeddingMatrix":
        rows = list(dm.labels if rows is None else rows)
        columns = list(dm.labels if columns is None else columns)
        ri = [dm.index(r) for r in rows]
        ci = [dm.index(c) for c in columns]
        return cls(tuple(rows), tuple(columns), dm.values[np.ix_(ri, ci)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([""] + list(self.col_labels))
        for lab, row in zip(self.row_labels, self.values):
            w.writerow([lab] + [repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EmbeddingMatrix":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        cols = tuple(rows[0][1:])
        labels = tuple(r[0] for r in rows[1:])
        vals = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        return cls(labels, cols, vals.reshape(len(labels), len(cols)))


@dataclass(frozen=True, eq=False)
class LabelEmbedding:
    scores: np.ndarray
    metric: MetricTag
    labels: tuple[str, ...] = ()


def metric_distances(pred, refs, metric: MetricTag | str) -> np.ndarray:
    """Distances from ``pred`` (L,) to every row of ``refs`` (N, L)."""
    metric = MetricTag(metric)
    pred = np.asarray(pred, dtype=np.float64)
    refs = np.atleast_2d(np.asarray(refs, dtype=np.float64))
    if refs.shape[1] != pred.shape[-1]:
        raise ReferenceMismatchError(
            f"prediction length {pred.shape[-1]} != reference length {refs.shape[1]}"
        )
    if metric is MetricTag.EUCLIDEAN:
        return np.sqrt(((refs - pred) ** 2).sum(axis=1))
    if metric is MetricTag.MANHATTAN:
        return np.abs(refs - pred).sum(axis=1)
    if metric is MetricTag.CORRELATION:
        pred = pred - pred.mean()
        refs = refs - refs.mean(axis=1, keepdims=True)
    pn = np.linalg.norm(pred)
    rn = np.linalg.norm(refs, axis=1)
    what = "zero-variance" if metric is MetricTag.CORRELATION else "zero"
    if pn == 0:
        raise DegenerateVectorError(f"{what} prediction vector under {metric.value}")
    if np.any(rn == 0):
        raise DegenerateVectorError(f"{what} reference row under {metric.value}")
    cos = refs @ pred / (rn * pn)
    return 1.0 - np.clip(cos, -1.0, 1.0)


def label_embedding(pred, refmat: EmbeddingMatrix, metric=MetricTag.COSINE) -> LabelEmbedding:
    if len(pred) != refmat.length:
        raise ReferenceMismatchError(
            f"prediction length {len(pred)} != embedding length {refmat.length}"
        )
    scores = metric_distances(pred, refmat.values, metric)
    return LabelEmbedding(scores, MetricTag(metric), refmat.row_labels)


def classify(pred, refmat: EmbeddingMatrix, metric=MetricTag.COSINE) -> tuple[str, LabelEmbedding]:
    """Nearest reference row; ties go to the smallest row index."""
    emb = label_embedding(pred, refmat, metric)
    return refmat.row_labels[int(np.argmin(emb.scores))], emb


def classify_batch(preds, refmat: EmbeddingMatrix, metric=MetricTag.COSINE) -> list[str]:
    return [classify(p, refmat, metric)[0] for p in np.atleast_2d(preds)]


def zero_shot_classify(
    pred,
    seen: EmbeddingMatrix,
    unseen: EmbeddingMatrix,
    mode: str = "GZSL",
    metric=MetricTag.COSINE,
) -> str:
    """ZSL scans unseen rows only; GZSL scans seen rows followed by unseen rows."""
    if seen.col_labels != unseen.col_labels:
        raise ReferenceMismatchError("seen and unseen embeddings use different columns")
    mode = mode.upper()
    if mode == "ZSL":
        return classify(pred, unseen, metric)[0]
    if mode != "GZSL":
        raise ValueError(f"unknown zero-shot mode {mode!r}")
    joint = EmbeddingMatrix(
        seen.row_labels + unseen.row_labels,
        seen.col_labels,
        np.vstack([seen.values, unseen.values]),
        seen.transformed or unseen.transformed,
    )
    return classify(pred, joint, metric)[0]


@dataclass(frozen=True, eq=False)
class KMeansResult:
    assignments: np.ndarray
    purity: float
    centers: np.ndarray
    inertia_history: list[float]
    n_iter: int


def _nearest(points, centers):
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1), d2


def kmeans_purity(points, true_labels, k: int, seed: int = 0, max_iter: int = 100) -> KMeansResult:
    """Lloyd's k-means with k-means++ seeding, scored by cluster purity."""
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    labels = list(true_labels)
    if len(x) == 0:
        raise KMeansConfigError("no points")
    if k < 1 or k > len(x):
        raise KMeansConfigError(f"k={k} must be in [1, {len(x)}]")
    if len(labels) != len(x):
        raise ValueError("labels and points differ in length")
    rng = np.random.default_rng(seed)
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        _, d2 = _nearest(x, np.array(centers))
        w = d2.min(axis=1)
        if w.sum() == 0:
            centers.append(x[rng.integers(len(x))])
        else:
            centers.append(x[rng.choice(len(x), p=w / w.sum())])
    centers = np.array(centers)
    assign, d2 = _nearest(x, centers)
    history = [float(d2[np.arange(len(x)), assign].sum())]
    it = 0
    for it in range(1, max_iter + 1):
        for c in range(k):
            members = x[assign == c]
            if len(members):
                centers[c] = members.mean(axis=0)
        new, d2 = _nearest(x, centers)
        history.append(float(d2[np.arange(len(x)), new].sum()))
        if np.array_equal(new, assign):
            break
        assign = new
    total = 0
    for c in range(k):
        members = [labels[i] for i in np.flatnonzero(assign == c)]
        if members:
            total += max(members.count(m) for m in set(members))
    return KMeansResult(assign, total / len(x), centers, history, it)


def insert_predicted_row(
    species_dm: DistanceMatrix,
    pred,
    col_map: Sequence[str | None],
    query_label: str,
) -> DistanceMatrix:
    """Append a query taxon whose distances come from a predicted embedding.

    ``col_map[j]`` names the species that column ``j`` of ``pred`` measures
    distance to (``None`` for columns outside ``species_dm``). Several
    columns mapping to one species are averaged; negative predictions are
    clamped to zero with a :class:`PredictionClampWarning`.
    """
    pred = np.asarray(pred, dtype=np.float64)
    if len(col_map) != len(pred):
        raise ReferenceMismatchError("column map and prediction differ in length")
    if query_label in species_dm.labels:
        raise ValueError(f"query label {query_label!r} already present")
    n = len(species_dm)
    row = np.zeros(n)
    for i, lab in enumerate(species_dm.labels):
        cols = [j for j, s in enumerate(col_map) if s == lab]
        if not cols:
            raise ReferenceMismatchError(f"species {lab!r} not covered by any column")
        row[i] = pred[cols].mean()
    if np.any(row < 0):
        bad = [species_dm.labels[i] for i in np.flatnonzero(row < 0)]
        warnings.warn(
            f"negative predicted distances to {bad} clamped to 0", PredictionClampWarning
        )
        row = np.maximum(row, 0.0)
    out = np.zeros((n + 1, n + 1))
    out[:n, :n] = species_dm.values
    out[n, :n] = row
    out[:n, n] = row
    return DistanceMatrix(species_dm.labels + (query_label,), out, species_dm.model)
