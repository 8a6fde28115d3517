"""Pairwise genetic distances under nucleotide substitution models.

Four estimators are provided: uncorrected p-distance, Jukes-Cantor (JC69),
Kimura two-parameter (K2P) and a composite-likelihood flavoured Tamura-Nei
(TN93_MCL) whose base frequencies and rate classes are pooled over every
pair of the alignment.

Bootstrap replicates resample alignment columns with replacement. Replicate
``b`` draws its columns from ``numpy.random.Generator(PCG64(SeedSequence([seed, b])))``
as ``rng.integers(0, n_sites, size=n_sites)``, so every replicate is
reproducible independently of evaluation order.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _backend
from .errors import (
    BootstrapDegenerateError,
    NoComparableSitesError,
    ReadSymmetryError,
    SaturationError,
)
from .seqio import CODE, AlignedSet


class ModelTag(str, enum.Enum):
    P_DIST = "P_DIST"
    JC69 = "JC69"
    K2P = "K2P"
    TN93_MCL = "TN93_MCL"


@dataclass(frozen=True)
class PairCounts:
    compared_sites: int
    transitions_AG: int
    transitions_CT: int
    transversions: int
    base_counts: tuple[int, int, int, int]

    @property
    def differences(self) -> int:
        return self.transitions_AG + self.transitions_CT + self.transversions

    @classmethod
    def from_row(cls, row) -> "PairCounts":
        row = [int(v) for v in row]
        return cls(row[0], row[1], row[2], row[3], tuple(row[4:8]))


@dataclass(frozen=True)
class PooledParams:
    """Base frequencies pooled over all compared sites of all pairs."""

    freqs: tuple[float, float, float, float]

    @classmethod
    def from_counts(cls, counts: Sequence[PairCounts]) -> "PooledParams":
        tot = np.zeros(4)
        for c in counts:
            tot += c.base_counts
        if tot.sum() == 0:
            raise NoComparableSitesError("no compared sites to pool base frequencies")
        return cls(tuple(float(v) for v in tot / tot.sum()))


def _encode(seq: str) -> np.ndarray:
    return np.array([CODE[ch] for ch in seq.upper().replace("U", "T")], dtype=np.int8)


def pair_counts(a: str, b: str, mask: Sequence[bool] | None = None) -> PairCounts:
    """Count compared sites and substitution classes between two sequences.

    Sites where either residue is ``-`` or ``N`` are skipped (pairwise
    deletion). ``mask`` implements complete deletion: a caller-supplied
    boolean vector of columns allowed to contribute.
    """
    if len(a) != len(b):
        raise ValueError("sequences must have equal length")
    codes = np.stack([_encode(a), _encode(b)])
    weights = np.ones(len(a), dtype=np.int64)
    if mask is not None:
        weights = np.asarray(mask, dtype=bool).astype(np.int64)
    row = _backend.pair_counts_all(codes, weights)[0, 1]
    counts = PairCounts.from_row(row)
    if counts.compared_sites == 0:
        raise NoComparableSitesError("no comparable sites between sequences")
    return counts


def complete_deletion_mask(aln: AlignedSet) -> np.ndarray:
    """Columns free of gaps and ``N`` in every sequence."""
    return (aln.codes() < 4).all(axis=0)


def _log_arg(x: float, what: str) -> float:
    if not x > 0.0 or not math.isfinite(x):
        raise SaturationError(f"{what}: logarithm argument {x:.6g} <= 0")
    return math.log(x)


def _log1p_arg(delta: float, what: str) -> float:
    # log(1 + delta), accurate for small divergences
    if not delta > -1.0 or not math.isfinite(delta):
        raise SaturationError(f"{what}: logarithm argument {1.0 + delta:.6g} <= 0")
    return math.log1p(delta)


def jc69(p: float) -> float:
    return -0.75 * _log1p_arg(-4.0 * p / 3.0, "JC69")


def k2p(P: float, Q: float) -> float:
    return -0.5 * _log1p_arg(-2.0 * P - Q, "K2P") - 0.25 * _log1p_arg(-2.0 * Q, "K2P")


def tn93(P1: float, P2: float, Q: float, freqs: Sequence[float]) -> float:
    """Tamura-Nei closed-form distance.

    ``P1`` is the A<->G proportion, ``P2`` the C<->T proportion, ``Q`` the
    transversion proportion; ``freqs`` are (pi_A, pi_C, pi_G, pi_T).
    """
    pa, pc, pg, pt = freqs
    pr, py = pa + pg, pc + pt
    if min(pa * pg, pc * pt, pr, py) <= 0.0:
        raise SaturationError("TN93 undefined: a base class has zero frequency")
    w1 = 1.0 - pr * P1 / (2.0 * pa * pg) - Q / (2.0 * pr)
    w2 = 1.0 - py * P2 / (2.0 * pc * pt) - Q / (2.0 * py)
    w3 = 1.0 - Q / (2.0 * pr * py)
    return (
        -2.0 * pa * pg / pr * _log_arg(w1, "TN93")
        - 2.0 * pc * pt / py * _log_arg(w2, "TN93")
        - 2.0 * (pr * py - pa * pg * py / pr - pc * pt * pr / py) * _log_arg(w3, "TN93")
    )


def pairwise_distance(
    counts: PairCounts, model: ModelTag | str, pooled: PooledParams | None = None
) -> float:
    model = ModelTag(model)
    n = counts.compared_sites
    if n < 1:
        raise NoComparableSitesError("compared_sites must be >= 1")
    if counts.differences == 0:
        return 0.0
    p = counts.differences / n
    if model is ModelTag.P_DIST:
        return p
    if model is ModelTag.JC69:
        return jc69(p)
    P = (counts.transitions_AG + counts.transitions_CT) / n
    Q = counts.transversions / n
    if model is ModelTag.K2P:
        return k2p(P, Q)
    if pooled is None:
        raise ValueError("TN93_MCL needs pooled parameters")
    return tn93(counts.transitions_AG / n, counts.transitions_CT / n, Q, pooled.freqs)


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Symmetric, zero-diagonal, nonnegative distance matrix."""

    labels: tuple[str, ...]
    values: np.ndarray
    model: str = "UNSPECIFIED"
    stderr: np.ndarray | None = None
    ci_low: np.ndarray | None = None
    ci_high: np.ndarray | None = None

    def __post_init__(self):
        labels = tuple(self.labels)
        vals = np.array(self.values, dtype=np.float64)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "values", vals)
        n = len(labels)
        if vals.shape != (n, n):
            raise ValueError(f"values shape {vals.shape} does not match {n} labels")
        if len(set(labels)) != n:
            raise ValueError("duplicate labels")
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise ValueError("distances must be finite and >= 0")
        if np.any(np.diag(vals) != 0):
            raise ValueError("diagonal must be zero")
        if not np.array_equal(vals, vals.T):
            raise ValueError("matrix must be symmetric")

    def __len__(self):
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def get(self, a: str, b: str) -> float:
        return float(self.values[self.index(a), self.index(b)])

    def subset(self, labels: Sequence[str]) -> "DistanceMatrix":
        idx = [self.index(lab) for lab in labels]
        return DistanceMatrix(tuple(labels), self.values[np.ix_(idx, idx)], self.model)

    def to_csv(self, precision: int | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([""] + list(self.labels))
        fmt = repr if precision is None else (lambda v: f"{v:.{precision}g}")
        for lab, row in zip(self.labels, self.values):
            w.writerow([lab] + [fmt(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, model: str = "UNSPECIFIED", tol: float = 1e-12):
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        header = rows[0][1:]
        labels = [r[0] for r in rows[1:]]
        if labels != header:
            raise ValueError("row and column labels differ")
        vals = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        if vals.shape != (len(labels), len(labels)):
            raise ValueError("distance CSV is not square")
        if np.any(np.abs(vals - vals.T) > tol):
            i, j = np.unravel_index(np.argmax(np.abs(vals - vals.T)), vals.shape)
            raise ReadSymmetryError(
                f"entries ({labels[i]}, {labels[j]}) and ({labels[j]}, {labels[i]}) disagree"
            )
        vals = 0.5 * (vals + vals.T)
        return cls(tuple(labels), vals, model)


def read_distance_csv(path, model: str = "UNSPECIFIED") -> DistanceMatrix:
    with open(path) as fh:
        return DistanceMatrix.from_csv(fh.read(), model)


def write_distance_csv(dm: DistanceMatrix, path) -> None:
    with open(path, "w") as fh:
        fh.write(dm.to_csv())


def _all_counts(codes: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return _backend.pair_counts_all(codes, weights)


def _matrix_from_counts(
    labels: Sequence[str], counts: np.ndarray, model: ModelTag
) -> np.ndarray:
    n = len(labels)
    pooled = None
    if model is ModelTag.TN93_MCL:
        iu = np.triu_indices(n, 1)
        tot = counts[iu][:, 4:8].sum(axis=0).astype(float)
        if tot.sum() == 0:
            raise NoComparableSitesError("no compared sites in the alignment")
        pooled = PooledParams(tuple(float(v) for v in tot / tot.sum()))
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            pc = PairCounts.from_row(counts[i, j])
            if pc.compared_sites == 0:
                raise NoComparableSitesError(
                    f"no comparable sites between {labels[i]!r} and {labels[j]!r}"
                )
            try:
                d = pairwise_distance(pc, model, pooled)
            except SaturationError as exc:
                raise SaturationError(str(exc), pair=(labels[i], labels[j])) from None
            out[i, j] = out[j, i] = d
    return out


def distance_matrix(
    aln: AlignedSet, model: ModelTag | str = ModelTag.TN93_MCL, mask=None
) -> DistanceMatrix:
    """All pairwise distances of an alignment.

    ``mask`` restricts the compared columns (complete deletion); by default
    each pair uses every column where both residues are A, C, G or T.
    """
    model = ModelTag(model)
    if len(aln) < 2:
        raise ValueError("need at least two sequences")
    weights = np.ones(aln.length, dtype=np.int64)
    if mask is not None:
        weights = np.asarray(mask, dtype=bool).astype(np.int64)
    counts = _all_counts(aln.codes(), weights)
    return DistanceMatrix(aln.labels, _matrix_from_counts(aln.labels, counts, model), model.value)


def replicate_columns(seed: int, replicate: int, n_sites: int) -> np.ndarray:
    """Column indices drawn for bootstrap replicate ``replicate``."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, replicate])))
    return rng.integers(0, n_sites, size=n_sites)


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    matrix: DistanceMatrix
    replicates: np.ndarray  # (B, n, n), NaN where a replicate was skipped
    skips: np.ndarray  # (n, n) skipped replicate counts


def bootstrap_se(
    aln: AlignedSet,
    model: ModelTag | str = ModelTag.TN93_MCL,
    B: int = 100,
    seed: int = 0,
    mask=None,
) -> BootstrapResult:
    """Column-bootstrap standard errors and 95% percentile intervals.

    Replicates in which a pair saturates are skipped for that pair; more
    than ``B/2`` skips for any pair raises :class:`BootstrapDegenerateError`.
    For TN93_MCL, base frequencies are re-pooled within each replicate.
    """
    model = ModelTag(model)
    if B < 2:
        raise ValueError("B must be >= 2")
    point = distance_matrix(aln, model, mask)
    codes = aln.codes()
    base_w = np.ones(aln.length, dtype=np.int64)
    if mask is not None:
        base_w = np.asarray(mask, dtype=bool).astype(np.int64)
    n = len(aln)
    reps = np.full((B, n, n), np.nan)
    for b in range(B):
        cols = replicate_columns(seed, b, aln.length)
        w = np.bincount(cols, minlength=aln.length).astype(np.int64) * base_w
        counts = _all_counts(codes, w)
        reps[b] = _replicate_matrix(aln.labels, counts, model)
    skips = np.isnan(reps).sum(axis=0)
    np.fill_diagonal(skips, 0)
    if np.any(skips > B / 2):
        i, j = np.unravel_index(np.argmax(skips), skips.shape)
        raise BootstrapDegenerateError(
            f"{skips[i, j]} of {B} replicates saturated for pair "
            f"({aln.labels[i]!r}, {aln.labels[j]!r})"
        )
    se = np.nanstd(reps, axis=0, ddof=1)
    lo = np.nanpercentile(reps, 2.5, axis=0)
    hi = np.nanpercentile(reps, 97.5, axis=0)
    for arr in (se, lo, hi):
        np.fill_diagonal(arr, 0.0)
    dm = DistanceMatrix(point.labels, point.values, model.value, se, lo, hi)
    return BootstrapResult(dm, reps, skips)


def _replicate_matrix(labels, counts, model):
    n = len(labels)
    pooled = None
    if model is ModelTag.TN93_MCL:
        iu = np.triu_indices(n, 1)
        tot = counts[iu][:, 4:8].sum(axis=0).astype(float)
        pooled = PooledParams(tuple(float(v) for v in tot / tot.sum()))
    out = np.full((n, n), np.nan)
    np.fill_diagonal(out, 0.0)
    for i in range(n):
        for j in range(i + 1, n):
            pc = PairCounts.from_row(counts[i, j])
            if pc.compared_sites == 0:
                continue
            try:
                out[i, j] = out[j, i] = pairwise_distance(pc, model, pooled)
            except SaturationError:
                pass
    return out


def jc69_delta_se(p: float, n_sites: int) -> float:
    """Analytic (delta-method) standard error of the JC69 distance."""
    return math.sqrt(p * (1.0 - p) / n_sites) / (1.0 - 4.0 * p / 3.0)
