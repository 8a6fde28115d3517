"""Aligned DNA sequence sets: FASTA I/O and conserved-block trimming."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

from .errors import (
    AlignmentLengthError,
    DuplicateLabelError,
    EmptyTrimError,
    FastaError,
    ResidueError,
)

ALPHABET = "ACGTN-"
CODE = {ch: i for i, ch in enumerate(ALPHABET)}
GAP_CODE = CODE["-"]
N_CODE = CODE["N"]
_LOOKUP = np.full(256, -1, dtype=np.int8)
for _ch, _i in CODE.items():
    _LOOKUP[ord(_ch)] = _i


@dataclass(frozen=True)
class AlignedSet:
    """Labeled, equal-length DNA sequences over ``ACGTN-``."""

    labels: tuple[str, ...]
    sequences: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(self.labels)
        seqs = tuple(s.upper().replace("U", "T") for s in self.sequences)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "sequences", seqs)
        if len(labels) != len(seqs):
            raise FastaError("labels and sequences differ in count")
        if not labels:
            raise FastaError("empty alignment")
        seen = set()
        for lab in labels:
            if not lab:
                raise FastaError("empty label")
            if lab in seen:
                raise DuplicateLabelError(f"duplicate label {lab!r}")
            seen.add(lab)
        length = len(seqs[0])
        if length < 1:
            raise AlignmentLengthError("sequences must have at least one column")
        for lab, seq in zip(labels, seqs):
            if len(seq) != length:
                raise AlignmentLengthError(
                    f"{lab!r} has length {len(seq)}, expected {length}"
                )
            for pos, ch in enumerate(seq):
                if ch not in CODE:
                    raise ResidueError(ch, pos + 1, lab)

    @property
    def length(self) -> int:
        return len(self.sequences[0])

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, label: str) -> str:
        return self.sequences[self.labels.index(label)]

    def codes(self) -> np.ndarray:
        """Residue codes as an ``(n, length)`` int8 array (A=0 .. '-'=5)."""
        raw = np.frombuffer("".join(self.sequences).encode("ascii"), dtype=np.uint8)
        return _LOOKUP[raw].reshape(len(self.labels), self.length)

    def columns(self, keep: Iterable[int]) -> "AlignedSet":
        idx = list(keep)
        return AlignedSet(
            self.labels, tuple("".join(s[i] for i in idx) for s in self.sequences)
        )

    def subset(self, labels: Iterable[str]) -> "AlignedSet":
        labels = list(labels)
        return AlignedSet(tuple(labels), tuple(self[lab] for lab in labels))


def parse_fasta(source: str | TextIO) -> AlignedSet:
    """Parse FASTA text (or an open text stream) into an :class:`AlignedSet`.

    Headers run to the end of the line; the first whitespace-delimited token
    is the label. Blank lines are ignored. Residues are upper-cased and
    ``U`` is read as ``T``.
    """
    text = source if isinstance(source, str) else source.read()
    labels: list[str] = []
    chunks: list[list[str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith(">"):
            head = line[1:].split()
            if not head:
                raise FastaError(f"empty header on line {lineno}")
            labels.append(head[0])
            chunks.append([])
        else:
            if not labels:
                raise FastaError(f"sequence data before first header on line {lineno}")
            chunks[-1].append("".join(line.split()))
    if not labels:
        raise FastaError("no FASTA records found")
    seen = set()
    for lab in labels:
        if lab in seen:
            raise DuplicateLabelError(f"duplicate label {lab!r}")
        seen.add(lab)
    seqs = []
    for lab, parts in zip(labels, chunks):
        seq = "".join(parts).upper().replace("U", "T")
        for pos, ch in enumerate(seq):
            if ch not in CODE:
                raise ResidueError(ch, pos + 1, lab)
        seqs.append(seq)
    return AlignedSet(tuple(labels), tuple(seqs))


def format_fasta(aln: AlignedSet, width: int = 70) -> str:
    lines = []
    for lab, seq in zip(aln.labels, aln.sequences):
        lines.append(">" + lab)
        lines.extend(seq[i:i + width] for i in range(0, len(seq), width))
    return "\n".join(lines) + "\n"


def read_fasta(path) -> AlignedSet:
    with open(path) as fh:
        return parse_fasta(fh)


def write_fasta(aln: AlignedSet, path, width: int = 70) -> None:
    with open(path, "w") as fh:
        fh.write(format_fasta(aln, width))


@dataclass(frozen=True)
class TrimParams:
    """Thresholds of the conserved-block rule.

    ``min_block_length=10`` and ``max_contiguous_nonconserved=8`` are the
    published settings; the two fractions follow the usual Gblocks defaults
    (more than half the sequences, and 85% for block flanks).
    """

    min_conserved_fraction: float = 0.5
    min_flank_fraction: float = 0.85
    max_contiguous_nonconserved: int = 8
    min_block_length: int = 10
    allow_gaps: bool = False

    def __post_init__(self):
        if not 0 < self.min_conserved_fraction <= self.min_flank_fraction <= 1:
            raise ValueError(
                "need 0 < min_conserved_fraction <= min_flank_fraction <= 1"
            )
        if self.max_contiguous_nonconserved < 1 or self.min_block_length < 1:
            raise ValueError("integer thresholds must be >= 1")


@dataclass(frozen=True)
class TrimReport:
    kept_spans: tuple[tuple[int, int], ...]
    kept_fraction: float
    params_used: TrimParams = field(default_factory=TrimParams)

    def to_dict(self) -> dict:
        return {
            "kept_spans": [list(s) for s in self.kept_spans],
            "kept_fraction": self.kept_fraction,
            "params_used": {
                "min_conserved_fraction": self.params_used.min_conserved_fraction,
                "min_flank_fraction": self.params_used.min_flank_fraction,
                "max_contiguous_nonconserved": self.params_used.max_contiguous_nonconserved,
                "min_block_length": self.params_used.min_block_length,
                "allow_gaps": self.params_used.allow_gaps,
            },
        }


# column classes
_BREAK, _NONCONS, _CONS, _HIGH = 0, 1, 2, 3


def classify_columns(aln: AlignedSet, params: TrimParams) -> np.ndarray:
    """Per-column class: 0 gap break, 1 nonconserved, 2 conserved, 3 highly conserved."""
    codes = aln.codes()
    n = codes.shape[0]
    gaps = (codes == GAP_CODE).sum(axis=0)
    base_counts = np.stack([(codes == b).sum(axis=0) for b in range(4)])
    frac = base_counts.max(axis=0) / n
    cls = np.full(codes.shape[1], _NONCONS, dtype=np.int8)
    gap_ok = np.ones_like(gaps, dtype=bool) if params.allow_gaps else gaps == 0
    cons = (frac > params.min_conserved_fraction) & gap_ok
    cls[cons] = _CONS
    cls[cons & (frac >= params.min_flank_fraction)] = _HIGH
    if not params.allow_gaps:
        cls[gaps > 0] = _BREAK
    return cls


def _blocks(cls: np.ndarray, params: TrimParams) -> list[tuple[int, int]]:
    # segments between gap breaks
    segments = []
    start = None
    for i, c in enumerate(cls):
        if c == _BREAK:
            if start is not None:
                segments.append((start, i))
                start = None
        elif start is None:
            start = i
    if start is not None:
        segments.append((start, len(cls)))

    pieces = []
    for s, e in segments:
        run_start = None
        piece_start = s
        for i in range(s, e + 1):
            nonc = i < e and cls[i] == _NONCONS
            if nonc:
                if run_start is None:
                    run_start = i
                continue
            if run_start is not None:
                if i - run_start > params.max_contiguous_nonconserved:
                    pieces.append((piece_start, run_start))
                    piece_start = i
                run_start = None
        pieces.append((piece_start, e))

    blocks = []
    for s, e in pieces:
        high = [i for i in range(s, e) if cls[i] == _HIGH]
        if not high:
            continue
        s, e = high[0], high[-1] + 1
        if e - s >= params.min_block_length:
            blocks.append((s, e))
    return blocks


def trim_conserved_blocks(
    aln: AlignedSet, params: TrimParams | None = None
) -> tuple[AlignedSet, TrimReport]:
    """Keep only the columns of conserved blocks.

    A block is a stretch of non-gap columns (unless ``allow_gaps``) whose
    nonconserved runs are at most ``max_contiguous_nonconserved`` long,
    whose first and last columns are highly conserved, and whose length is
    at least ``min_block_length``. Column order is preserved.
    """
    params = params or TrimParams()
    if len(aln) < 2:
        raise ValueError("trimming needs at least two sequences")
    blocks = _blocks(classify_columns(aln, params), params)
    if not blocks:
        raise EmptyTrimError("no conserved block survives trimming")
    keep = [i for s, e in blocks for i in range(s, e)]
    report = TrimReport(tuple(blocks), len(keep) / aln.length, params)
    return aln.columns(keep), report
