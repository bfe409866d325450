"""Set-based precision/recall/F1, augmentation robustness, and gradient saliency."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, Mapping, Sequence, Union

import numpy as np

from .embed import EmbeddingMatrix, EmbeddingStore, synth_embed
from .errors import DataError
from .rng import Rng
from .seqio import ProteinSequence, TagSpec, apply_tag, simulate_ortholog, tag_offset
from .stage1 import ResidueClassifier, score_residues
from .stage2 import ECClassifier, ECLabel, mean_pool, merged_predict, pool, predict_ec, select_residues, selection_size

AVERAGINGS = ("macro", "micro", "weighted")


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class Aggregate:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class SensitivityRow:
    name: str
    f1: float
    sensitivity: float  # percent


@dataclass
class EvaluationReport:
    per_class: dict[str, ClassScores]
    macro: Aggregate
    micro: Aggregate
    weighted: Aggregate
    averaging: str = "macro"
    n_proteins: int = 0
    sensitivity: list[SensitivityRow] = field(default_factory=list)

    @property
    def headline(self) -> Aggregate:
        return getattr(self, self.averaging)

    @property
    def f1(self) -> float:
        return self.headline.f1

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "averaging": self.averaging,
            "n_proteins": self.n_proteins,
            "f1": self.f1,
            "precision": self.headline.precision,
            "recall": self.headline.recall,
            "macro": vars(self.macro),
            "micro": vars(self.micro),
            "weighted": vars(self.weighted),
            "per_class": {k: vars(v) for k, v in self.per_class.items()},
        }
        if self.sensitivity:
            out["sensitivity"] = [vars(r) for r in self.sensitivity]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [f"{'class':<16}{'P':>8}{'R':>8}{'F1':>8}{'support':>9}"]
        for name, c in self.per_class.items():
            lines.append(f"{name:<16}{c.precision:>8.3f}{c.recall:>8.3f}{c.f1:>8.3f}{c.support:>9d}")
        for avg in AVERAGINGS:
            a = getattr(self, avg)
            lines.append(f"{avg:<16}{a.precision:>8.3f}{a.recall:>8.3f}{a.f1:>8.3f}")
        if self.sensitivity:
            lines.append("")
            lines.append(f"{'augmentation':<24}{'F1':>8}{'sensitivity':>13}")
            for r in self.sensitivity:
                lines.append(f"{r.name:<24}{r.f1:>8.3f}{r.sensitivity:>12.0f}%")
        return "\n".join(lines) + "\n"


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r else 0.0


def prf1(
    pred_sets: Mapping[str, Iterable[Hashable]],
    truth_sets: Mapping[str, Iterable[Hashable]],
    averaging: str = "macro",
) -> EvaluationReport:
    """Per-class counts from set membership, then macro/micro/weighted aggregates.

    Macro and weighted averages run over classes with truth support > 0.
    """
    if averaging not in AVERAGINGS:
        raise DataError(f"averaging must be one of {AVERAGINGS}")
    if set(pred_sets) != set(truth_sets):
        missing = sorted(set(pred_sets) ^ set(truth_sets))[:5]
        raise DataError(f"prediction and truth cover different proteins (e.g. {', '.join(missing)})")
    tp: dict[str, int] = {}
    fp: dict[str, int] = {}
    fn: dict[str, int] = {}
    for pid in truth_sets:
        pred = {str(x) for x in pred_sets[pid]}
        gold = {str(x) for x in truth_sets[pid]}
        for c in pred | gold:
            tp.setdefault(c, 0)
            fp.setdefault(c, 0)
            fn.setdefault(c, 0)
        for c in pred & gold:
            tp[c] += 1
        for c in pred - gold:
            fp[c] += 1
        for c in gold - pred:
            fn[c] += 1
    per_class: dict[str, ClassScores] = {}
    for c in sorted(tp):
        p = tp[c] / (tp[c] + fp[c]) if tp[c] + fp[c] else 0.0
        r = tp[c] / (tp[c] + fn[c]) if tp[c] + fn[c] else 0.0
        per_class[c] = ClassScores(p, r, _f1(p, r), tp[c] + fn[c], tp[c], fp[c], fn[c])
    supported = [s for s in per_class.values() if s.support > 0]
    if supported:
        macro = Aggregate(
            float(np.mean([s.precision for s in supported])),
            float(np.mean([s.recall for s in supported])),
            float(np.mean([s.f1 for s in supported])),
        )
        w = np.array([s.support for s in supported], dtype=np.float64)
        w /= w.sum()
        weighted = Aggregate(
            float(np.dot(w, [s.precision for s in supported])),
            float(np.dot(w, [s.recall for s in supported])),
            float(np.dot(w, [s.f1 for s in supported])),
        )
    else:
        macro = weighted = Aggregate(0.0, 0.0, 0.0)
    TP, FP, FN = sum(tp.values()), sum(fp.values()), sum(fn.values())
    mp = TP / (TP + FP) if TP + FP else 0.0
    mr = TP / (TP + FN) if TP + FN else 0.0
    micro = Aggregate(mp, mr, _f1(mp, mr))
    return EvaluationReport(per_class, macro, micro, weighted, averaging, len(truth_sets))


def sensitivity(f1_original: float, f1_augmented: float) -> float:
    """Relative F1 drop in percent; negative when the augmentation helps."""
    if f1_original == 0:
        raise DataError("sensitivity is undefined when the original F1 is 0")
    return 100.0 * (f1_original - f1_augmented) / f1_original


# -- robustness harness ------------------------------------------------------


@dataclass(frozen=True)
class OrthologSpec:
    identity: float = 0.8

    @property
    def name(self) -> str:
        return f"ortholog@{self.identity:g}"


@dataclass(frozen=True)
class IdentityAug:
    name: str = "identity"


Augmentation = Union[TagSpec, OrthologSpec, IdentityAug]


@dataclass(frozen=True)
class EvalProtein:
    seq: ProteinSequence
    truth: frozenset
    functional: tuple[int, ...] = ()


Embedder = Callable[[ProteinSequence, Sequence[int]], EmbeddingMatrix]


class SyntheticEmbedder:
    """Re-embeds (possibly augmented) sequences with :func:`synth_embed`."""

    def __init__(self, dim: int, seed: int, signal: float):
        self.dim = dim
        self.seed = seed
        self.signal = signal

    def __call__(self, seq: ProteinSequence, functional: Sequence[int]) -> EmbeddingMatrix:
        return synth_embed(seq, self.dim, self.seed, functional, self.signal)


class StoreEmbedder:
    """Looks augmented sequences up by id in a precomputed store."""

    def __init__(self, store: EmbeddingStore):
        self.store = store

    def __call__(self, seq: ProteinSequence, functional: Sequence[int]) -> EmbeddingMatrix:
        m = self.store.lookup(seq.id)
        if m.n_residues != len(seq):
            raise DataError(f"{seq.id}: stored embedding has {m.n_residues} rows for {len(seq)} residues")
        return m


@dataclass
class Pipeline:
    """Sequence in, predicted EC label set out."""

    stage1: ResidueClassifier
    stage2: ECClassifier
    embedder: Embedder
    keep: float = 0.2
    fixed_k: int | None = None
    known: frozenset | None = None
    scorer: Callable[[EmbeddingMatrix], np.ndarray] | None = None

    def scores(self, matrix: EmbeddingMatrix) -> np.ndarray:
        if self.scorer is not None:
            return self.scorer(matrix)
        return score_residues(self.stage1, matrix)

    def predict(self, seq: ProteinSequence, functional: Sequence[int] = ()) -> set[ECLabel]:
        matrix = self.embedder(seq, functional)
        pooled = pool(matrix, self.scores(matrix), self.keep, self.fixed_k)
        if self.known is not None:
            return {merged_predict(self.stage2, pooled.vector, self.known)[0]}
        return {predict_ec(self.stage2, pooled.vector, 1)[0][0]}


def augment(
    protein: EvalProtein, aug: Augmentation, rng: Rng
) -> tuple[ProteinSequence, tuple[int, ...]]:
    """Augmented sequence and where the original functional residues ended up."""
    if isinstance(aug, TagSpec):
        shift = tag_offset(aug)
        return apply_tag(protein.seq, aug), tuple(i + shift for i in protein.functional)
    if isinstance(aug, OrthologSpec):
        sub = rng.child(f"ortholog/{protein.seq.id}")
        return simulate_ortholog(protein.seq, aug.identity, sub, protected=protein.functional), protein.functional
    if isinstance(aug, IdentityAug):
        return protein.seq, protein.functional
    raise TypeError(f"unsupported augmentation {aug!r}")


def aug_name(aug: Augmentation) -> str:
    if isinstance(aug, TagSpec):
        return f"tag:{aug.name}@{aug.terminus}"
    return aug.name


def robustness_suite(
    pipeline: Pipeline,
    test_set: Sequence[EvalProtein],
    augmentations: Sequence[Augmentation],
    rng: Rng,
    averaging: str = "macro",
    level: int = 4,
) -> EvaluationReport:
    """Evaluate the original test set, then every augmentation against it.

    ``level=3`` compares predictions and truth at the 3-digit prefix.
    """

    def score(aug: Augmentation | None) -> EvaluationReport:
        preds, truth = {}, {}
        for prot in test_set:
            if aug is None:
                seq, func = prot.seq, prot.functional
            else:
                seq, func = augment(prot, aug, rng)
            preds[prot.seq.id] = _at_level(pipeline.predict(seq, func), level)
            truth[prot.seq.id] = _at_level(prot.truth, level)
        return prf1(preds, truth, averaging)

    base = score(None)
    for aug in augmentations:
        rep = score(aug)
        base.sensitivity.append(SensitivityRow(aug_name(aug), rep.f1, sensitivity(base.f1, rep.f1)))
    return base


def _at_level(labels: Iterable, level: int) -> set:
    if level == 4:
        return set(labels)
    return {lab.prefix3 if isinstance(lab, ECLabel) else lab for lab in labels}


# -- saliency ----------------------------------------------------------------


@dataclass
class SaliencyMap:
    protein_id: str
    values: np.ndarray
    target: ECLabel


def _pooled_input_grad(stage2: ECClassifier, vector: np.ndarray) -> tuple[np.ndarray, int]:
    """d(target logit)/d(pooled vector), target = predicted 4-digit class."""
    h, tcache = stage2.trunk.forward(vector[None, :])
    p4, c4 = stage2.head4.forward(h)
    target = int(np.argmax(p4[0]))
    onehot = np.zeros_like(p4)
    onehot[0, target] = 1.0
    _, gh = stage2.head4.backward(c4, onehot, need_input=True)
    _, gx = stage2.trunk.backward(tcache, gh, need_input=True)
    return gx[0], target


def saliency(
    stage1: ResidueClassifier,
    stage2: ECClassifier,
    matrix: EmbeddingMatrix,
    keep: float = 0.2,
    fixed_k: int | None = None,
    mode: str = "weighted",
    frozen_scores: bool = False,
) -> SaliencyMap:
    """Per-residue L2 norm of d(target logit)/d(e_i), scaled to max 1.

    ``mode="weighted"`` backpropagates through the score-weighted pooling and
    the residue classifier (selection indicators held constant);
    ``frozen_scores`` additionally treats the scores as constants.
    ``mode="mean"`` swaps in unweighted mean pooling.
    """
    if matrix.dim != stage1.dim or matrix.dim != stage2.dim:
        raise DataError(f"{matrix.protein_id}: embedding dim {matrix.dim} does not fit the models")
    x = np.asarray(matrix.rows, dtype=np.float64)
    n = len(x)
    if mode == "mean":
        v, target = _pooled_input_grad(stage2, mean_pool(matrix).vector)
        grads = np.tile(v / n, (n, 1))
    elif mode == "weighted":
        p, cache = stage1.network.forward(x, exact_rows=True)
        f = p[:, 0]
        k = selection_size(n, keep, fixed_k)
        sel = select_residues(f, k)
        v, target = _pooled_input_grad(stage2, pool(matrix, f, keep, fixed_k).vector)
        grads = np.zeros_like(x)
        grads[sel] = f[sel, None] * v / k
        if not frozen_scores:
            g_logit = np.zeros((n, 1))
            g_logit[sel, 0] = f[sel] * (1.0 - f[sel]) * (x[sel] @ v) / k
            _, gx = stage1.network.backward(cache, g_logit, need_input=True)
            grads[sel] += gx[sel]
    else:
        raise DataError(f"unknown saliency mode {mode!r}")
    values = np.linalg.norm(grads, axis=1)
    top = values.max()
    if top > 0:
        values = values / top
    return SaliencyMap(matrix.protein_id, values, stage2.vocab4[target])


def format_saliency_tsv(maps: Sequence[SaliencyMap]) -> str:
    return "".join(
        f"{m.protein_id}\t{i}\t{float(v)!r}\n" for m in maps for i, v in enumerate(m.values)
    )
