"""Alignment-column conservation entropy and low-entropy pseudo-labels."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, ParseError
from .rng import Rng
from .seqio import AMINO_ACIDS, AlignedFamily

_AA_INDEX = {a: i for i, a in enumerate(AMINO_ACIDS)}
LN20 = math.log(20.0)


@dataclass(frozen=True)
class ColumnDistribution:
    probs: np.ndarray  # 20 entries in AMINO_ACIDS order
    empty: bool = False


@dataclass
class EntropyProfile:
    protein_id: str
    values: np.ndarray  # nats; NaN where masked
    mask: np.ndarray  # True = valid

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())


@dataclass
class ResidueLabelSet:
    protein_id: str
    labels: np.ndarray  # int8 in {0, 1}
    source: str = "curated"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.source not in ("curated", "pseudo"):
            raise DataError(f"unknown label source {self.source!r}")
        if self.labels.ndim != 1 or self.labels.size == 0:
            raise DataError(f"{self.protein_id}: labels must be a non-empty vector")
        if not np.isin(self.labels, (0, 1)).all():
            raise DataError(f"{self.protein_id}: labels must be 0/1")

    def positives(self) -> np.ndarray:
        return np.flatnonzero(self.labels == 1)


@dataclass(frozen=True)
class PolicyScores:
    precision: float
    recall: float
    f1: float
    tp: int = 0
    fp: int = 0
    fn: int = 0


def column_distribution(family: AlignedFamily, column: int) -> ColumnDistribution:
    if not 0 <= column < family.length:
        raise IndexError(f"column {column} out of range for alignment of length {family.length}")
    counts = np.zeros(len(AMINO_ACIDS), dtype=np.float64)
    for row in family.rows:
        k = _AA_INDEX.get(row[column])
        if k is not None:
            counts[k] += 1.0
    total = counts.sum()
    if total == 0:
        return ColumnDistribution(counts, empty=True)
    return ColumnDistribution(counts / total)


def column_entropy(dist: ColumnDistribution) -> float:
    """Shannon entropy in nats, with 0 ln 0 taken as 0."""
    if dist.empty:
        raise DataError("entropy of an empty column is undefined")
    p = dist.probs[dist.probs > 0]
    h = -float(np.sum(p * np.log(p)))
    # a one-hot column gives -(1 * 0) = -0.0
    return h if h > 0.0 else 0.0


def entropy_profile(family: AlignedFamily) -> EntropyProfile:
    cols = family.query_columns()
    if not cols:
        raise DataError(f"{family.query_id}: query row is all gaps")
    values = np.full(len(cols), np.nan)
    mask = np.zeros(len(cols), dtype=bool)
    for pos, col in enumerate(cols):
        dist = column_distribution(family, col)
        if not dist.empty:
            values[pos] = column_entropy(dist)
            mask[pos] = True
    return EntropyProfile(family.query_id, values, mask)


def pseudo_label(profile: EntropyProfile, fraction: float = 0.10) -> ResidueLabelSet:
    """Mark the ``max(1, ceil(fraction * n_valid))`` lowest-entropy positions.

    Ties go to the lower position index; masked positions stay 0.
    """
    if not 0.0 < fraction <= 1.0:
        raise DataError(f"fraction must be in (0, 1], got {fraction}")
    valid = np.flatnonzero(profile.mask)
    if valid.size == 0:
        raise DataError(f"{profile.protein_id}: no valid positions to label")
    k = max(1, math.ceil(fraction * valid.size))
    order = np.lexsort((valid, profile.values[valid]))
    labels = np.zeros(len(profile.values), dtype=np.int8)
    labels[valid[order[:k]]] = 1
    return ResidueLabelSet(profile.protein_id, labels, "pseudo")


def balance_pseudo_dataset(
    label_sets: Sequence[ResidueLabelSet], rng: Rng
) -> list[tuple[str, int, int]]:
    """Keep every positive and an equal-size uniform sample of negatives.

    In the unusual case of more positives than negatives the positives are
    subsampled instead. Returns ``(protein_id, position, label)`` triples,
    positives first, both groups in input order.
    """
    pos: list[tuple[str, int, int]] = []
    neg: list[tuple[str, int, int]] = []
    for ls in label_sets:
        for i, y in enumerate(ls.labels):
            (pos if y == 1 else neg).append((ls.protein_id, i, int(y)))
    if not pos or not neg:
        raise DataError(
            f"cannot balance a degenerate label set ({len(pos)} positives, {len(neg)} negatives)"
        )
    if len(neg) == len(pos):
        return pos + neg
    if len(neg) < len(pos):
        keep = np.sort(rng.sample_without_replacement(len(pos), len(neg)))
        return [pos[i] for i in keep] + neg
    keep = np.sort(rng.sample_without_replacement(len(neg), len(pos)))
    return pos + [neg[i] for i in keep]


def binary_prf(tp: int, fp: int, fn: int) -> PolicyScores:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return PolicyScores(p, r, f, tp, fp, fn)


def evaluate_policy(
    pseudo: Sequence[ResidueLabelSet], truth: Sequence[ResidueLabelSet]
) -> PolicyScores:
    """Micro-averaged positive-class precision/recall/F1 over all residues."""
    truth_by_id = {t.protein_id: t for t in truth}
    if len(truth_by_id) != len(truth) or len(pseudo) != len(truth):
        raise DataError("pseudo and truth label sets do not cover the same proteins")
    tp = fp = fn = 0
    for ps in pseudo:
        t = truth_by_id.get(ps.protein_id)
        if t is None:
            raise DataError(f"no truth labels for {ps.protein_id}")
        if len(t.labels) != len(ps.labels):
            raise DataError(
                f"{ps.protein_id}: length mismatch ({len(ps.labels)} vs {len(t.labels)})"
            )
        a = ps.labels == 1
        b = t.labels == 1
        tp += int(np.sum(a & b))
        fp += int(np.sum(a & ~b))
        fn += int(np.sum(~a & b))
    return binary_prf(tp, fp, fn)


# -- TSV interchange ---------------------------------------------------------


def format_labels_tsv(label_sets: Iterable[ResidueLabelSet]) -> str:
    lines = []
    for ls in label_sets:
        for i, y in enumerate(ls.labels):
            lines.append(f"{ls.protein_id}\t{i}\t{int(y)}\t{ls.source}")
    return "".join(line + "\n" for line in lines)


def parse_labels_tsv(text: str) -> list[ResidueLabelSet]:
    """Read residue labels; positions of a protein must be 0..n-1 (any order)."""
    rows: dict[tuple[str, str], dict[int, int]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.rstrip("\r").split("\t")
        if len(parts) != 4:
            raise ParseError(f"expected 4 tab-separated fields, got {len(parts)}", lineno)
        pid, pos, lab, src = parts
        try:
            pos_i, lab_i = int(pos), int(lab)
        except ValueError:
            raise ParseError("position and label must be integers", lineno) from None
        if lab_i not in (0, 1) or pos_i < 0:
            raise ParseError("label must be 0/1 and position non-negative", lineno)
        cell = rows.setdefault((pid, src), {})
        if pos_i in cell:
            raise ParseError(f"duplicate position {pos_i} for {pid}", lineno)
        cell[pos_i] = lab_i
    out = []
    for (pid, src), cell in rows.items():
        n = max(cell) + 1
        if len(cell) != n:
            raise DataError(f"{pid}: label positions are not contiguous from 0")
        out.append(ResidueLabelSet(pid, np.array([cell[i] for i in range(n)]), src))
    return out


def read_labels_tsv(path: str | Path) -> list[ResidueLabelSet]:
    return parse_labels_tsv(Path(path).read_text(encoding="utf-8"))


def write_labels_tsv(label_sets: Iterable[ResidueLabelSet], path: str | Path) -> None:
    Path(path).write_text(format_labels_tsv(label_sets), encoding="utf-8")


def format_profiles_tsv(profiles: Iterable[EntropyProfile]) -> str:
    lines = []
    for pr in profiles:
        for i, (h, ok) in enumerate(zip(pr.values, pr.mask)):
            value = repr(float(h)) if ok else "nan"
            lines.append(f"{pr.protein_id}\t{i}\t{value}\t{int(ok)}")
    return "".join(line + "\n" for line in lines)
