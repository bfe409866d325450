"""Pipeline steps shared by the command line and the end-to-end runner."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import PipelineConfig
from .conservation import (
    ResidueLabelSet,
    balance_pseudo_dataset,
    entropy_profile,
    evaluate_policy,
    pseudo_label,
    read_labels_tsv,
    write_labels_tsv,
)
from .embed import EmbeddingMatrix, EmbeddingStore, read_store, write_store
from .errors import DataError, ParseError
from .evalkit import EvaluationReport, prf1
from .seqio import read_aligned_fasta
from .stage1 import ResidueClassifier, eval_stage1, format_scores_tsv, score_residues, train_stage1
from .stage2 import ECClassifier, ECLabel, merged_predict, pool, predict_ec, read_ec_tsv, train_stage2

log = logging.getLogger(__name__)

MSA_SUFFIXES = (".a2m", ".a3m", ".afa", ".fasta", ".fa")


# -- stage 0: pseudo labels --------------------------------------------------


def msa_files(msa_dir: str | Path) -> list[Path]:
    d = Path(msa_dir)
    if not d.is_dir():
        raise DataError(f"{d}: not a directory")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in MSA_SUFFIXES)
    if not files:
        raise DataError(f"{d}: no alignment files ({', '.join(MSA_SUFFIXES)})")
    return files


def pseudo_label_dir(msa_dir: str | Path, fraction: float = 0.10) -> list[ResidueLabelSet]:
    """One pseudo-label set per alignment file, in file-name order."""
    return [pseudo_label(entropy_profile(read_aligned_fasta(p)), fraction) for p in msa_files(msa_dir)]


# -- stage 1 / pooling -------------------------------------------------------


def score_store(model: ResidueClassifier, store: EmbeddingStore) -> list[tuple[str, np.ndarray]]:
    return [(m.protein_id, score_residues(model, m)) for m in store]


def pool_store(
    model: ResidueClassifier, store: EmbeddingStore, keep: float = 0.2, fixed_k: int | None = None
) -> list[EmbeddingMatrix]:
    """Pooled vectors as one-row matrices, ready for a SLEB container."""
    out = []
    for m in store:
        rep = pool(m, score_residues(model, m), keep, fixed_k)
        out.append(EmbeddingMatrix(m.protein_id, rep.vector[None, :]))
    return out


def pooled_vector(store: EmbeddingStore, protein_id: str) -> np.ndarray:
    m = store.lookup(protein_id)
    if m.n_residues != 1:
        raise DataError(f"{protein_id}: pooled store entries must have exactly one row")
    return np.asarray(m.rows[0], dtype=np.float64)


# -- stage 2 -----------------------------------------------------------------


def stage2_samples(
    pooled: EmbeddingStore, labels: dict[str, list[ECLabel]]
) -> list[tuple[np.ndarray, ECLabel]]:
    """One sample per (protein, label), in label-file order."""
    return [(pooled_vector(pooled, pid), lab) for pid, labs in labels.items() for lab in labs]


def read_known_classes(path: str | Path) -> list[ECLabel]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if line.strip() and not line.startswith("#"):
            try:
                out.append(ECLabel.parse(line))
            except DataError as exc:
                raise ParseError(str(exc), lineno) from None
    return out


def predict_store(
    model: ECClassifier,
    pooled: EmbeddingStore,
    known: Iterable[ECLabel] | None = None,
    ids: Sequence[str] | None = None,
) -> list[tuple[str, ECLabel, float]]:
    """Top-1 label per protein; the merged head is used when ``known`` is given."""
    known = list(known) if known is not None else None
    rows = []
    for pid in ids if ids is not None else pooled.ids():
        v = pooled_vector(pooled, pid)
        if known is None:
            lab, prob = predict_ec(model, v, 1)[0]
        else:
            lab, prob = merged_predict(model, v, known)
        rows.append((pid, lab, prob))
    return rows


def format_predictions_tsv(rows: Iterable[tuple[str, ECLabel, float]]) -> str:
    return "".join(f"{pid}\t{lab}\t{float(p)!r}\n" for pid, lab, p in rows)


def prediction_sets(rows: Iterable[tuple[str, ECLabel, float]]) -> dict[str, set[ECLabel]]:
    out: dict[str, set[ECLabel]] = {}
    for pid, lab, _ in rows:
        out.setdefault(pid, set()).add(lab)
    return out


def evaluate_labels(
    pred: dict[str, Iterable[ECLabel]],
    truth: dict[str, Iterable[ECLabel]],
    averaging: str = "macro",
    level: int = 4,
) -> EvaluationReport:
    """Compare EC label sets; proteins without a prediction count as empty sets."""
    extra = sorted(set(pred) - set(truth))
    if extra:
        raise DataError(f"predictions for proteins without truth labels: {', '.join(extra[:5])}")
    if level not in (3, 4):
        raise DataError("level must be 3 or 4")

    def at_level(labs: Iterable[ECLabel]) -> set[ECLabel]:
        return {lab.prefix3 for lab in labs} if level == 3 else set(labs)

    pred_sets = {pid: at_level(pred.get(pid, ())) for pid in truth}
    truth_sets = {pid: at_level(labs) for pid, labs in truth.items()}
    return prf1(pred_sets, truth_sets, averaging)


def parse_scores_tsv(text: str) -> dict[str, np.ndarray]:
    """``protein_id \\t position \\t score`` rows back into per-protein arrays."""
    cells: dict[str, dict[int, float]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}", lineno)
        try:
            pos, score = int(parts[1]), float(parts[2])
        except ValueError:
            raise ParseError("position must be an integer and score a number", lineno) from None
        cells.setdefault(parts[0], {})[pos] = score
    out = {}
    for pid, cell in cells.items():
        n = max(cell) + 1
        if len(cell) != n or min(cell) < 0:
            raise DataError(f"{pid}: score positions are not contiguous from 0")
        out[pid] = np.array([cell[i] for i in range(n)])
    return out


def evaluate_residues(
    scores: dict[str, np.ndarray], truth: Sequence[ResidueLabelSet], threshold: float = 0.5
) -> dict[str, float]:
    """Micro precision/recall/F1 of ``score > threshold`` against residue labels."""
    preds = []
    for t in truth:
        s = scores.get(t.protein_id)
        if s is None:
            raise DataError(f"no scores for {t.protein_id}")
        if len(s) != len(t.labels):
            raise DataError(f"{t.protein_id}: {len(s)} scores for {len(t.labels)} labels")
        preds.append(ResidueLabelSet(t.protein_id, (s > threshold).astype(np.int8), "pseudo"))
    return asdict(evaluate_policy(preds, truth))


# -- end to end --------------------------------------------------------------


@dataclass
class RunResult:
    report: dict
    outputs: dict[str, str]
    timings: dict[str, float] = field(default_factory=dict)


def _truth_residues(path: Path) -> list[ResidueLabelSet]:
    return read_labels_tsv(path) if path.exists() else []


def run_pipeline(config: PipelineConfig, fixture: str | Path, out: str | Path) -> RunResult:
    """Pseudo-label, train both stages, predict and evaluate on a fixture directory.

    Everything written under ``out`` is a pure function of the fixture files
    and ``config``; wall-clock timings are only returned.
    """
    fixture, out = Path(fixture), Path(out)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    outputs: dict[str, str] = {}
    clock = time.perf_counter()

    def lap(name: str) -> None:
        nonlocal clock
        now = time.perf_counter()
        timings[name] = now - clock
        clock = now

    store = read_store(fixture / "embeddings.sleb")
    pseudo = pseudo_label_dir(fixture / "msa", config.pseudo_fraction)
    write_labels_tsv(pseudo, out / "pseudo.tsv")
    outputs["pseudo"] = str(out / "pseudo.tsv")
    msa_samples = balance_pseudo_dataset(pseudo, config.stream("pseudo/balance"))
    sup = read_labels_tsv(fixture / "labels.curated.tsv")
    lap("pseudo_label")

    stage1, trace1 = train_stage1(config.stage1, store, sup, msa_samples)
    stage1.save(out / "stage1.ckpt")
    outputs["stage1"] = str(out / "stage1.ckpt")
    lap("stage1")

    scored = score_store(stage1, store)
    (out / "scores.tsv").write_text(format_scores_tsv(scored), encoding="utf-8")
    outputs["scores"] = str(out / "scores.tsv")
    write_store(pool_store(stage1, store, config.keep_fraction), out / "pooled.sleb")
    pooled = read_store(out / "pooled.sleb")
    outputs["pooled"] = str(out / "pooled.sleb")
    lap("pool")

    train_labels = read_ec_tsv(fixture / "ec.train.tsv")
    stage2, trace2 = train_stage2(config.stage2, stage2_samples(pooled, train_labels))
    stage2.save(out / "stage2.ckpt")
    outputs["stage2"] = str(out / "stage2.ckpt")
    lap("stage2")

    test_labels = read_ec_tsv(fixture / "ec.test.tsv")
    test_ids = list(test_labels)
    rows = predict_store(stage2, pooled, None, test_ids)
    (out / "predictions.tsv").write_text(format_predictions_tsv(rows), encoding="utf-8")
    outputs["predictions"] = str(out / "predictions.tsv")
    report: dict = {}
    residue_truth = _truth_residues(fixture / "labels.test.tsv")
    if residue_truth:
        report["stage1"] = asdict(eval_stage1(stage1, store, residue_truth))
    functional = _truth_residues(fixture / "labels.functional.tsv")
    if functional:
        by_id = {ls.protein_id: ls for ls in functional}
        report["pseudo_policy"] = asdict(evaluate_policy(pseudo, [by_id[p.protein_id] for p in pseudo]))
    report["stage2"] = evaluate_labels(prediction_sets(rows), test_labels).to_dict()
    known_path = fixture / "known_classes.txt"
    if known_path.exists():
        merged = predict_store(stage2, pooled, read_known_classes(known_path), test_ids)
        (out / "predictions.merged.tsv").write_text(format_predictions_tsv(merged), encoding="utf-8")
        outputs["predictions_merged"] = str(out / "predictions.merged.tsv")
        report["merged"] = evaluate_labels(prediction_sets(merged), test_labels).to_dict()
    report["final_loss"] = {"stage1": trace1[-1] if trace1 else None, "stage2": trace2[-1] if trace2 else None}
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    outputs["report"] = str(out / "report.json")
    lap("predict")
    return RunResult(report, outputs, timings)
