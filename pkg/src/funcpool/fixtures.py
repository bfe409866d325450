"""Synthetic enzyme families with planted functional residues.

Each EC class owns a motif of (amino acid, offset mod 8) pairs. A protein of
that class carries the motif inside one 8-residue block; those residues are
its functional sites, are fully conserved in its MSA, and get the planted
embedding signal. A couple of extra "structural" columns are conserved too,
so low-entropy pseudo-labels are informative but imperfect.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .conservation import ResidueLabelSet, write_labels_tsv
from .embed import EmbeddingMatrix, synth_embed, write_store
from .errors import DataError
from .rng import Rng
from .seqio import AMINO_ACIDS, AlignedFamily, ProteinSequence, format_aligned_fasta, write_fasta
from .stage2 import ECLabel, format_ec_tsv

MIN_LEN = 48
MAX_LEN = 96


@dataclass
class FixtureParams:
    n_proteins: int = 200
    n_classes: int = 8
    seed: int = 0
    dim: int = 32
    signal: float = 4.0
    msa_rows: int = 50
    motif_size: int = 4
    structural_sites: int = 2
    mutation_rate: float = 0.75
    gap_rate: float = 0.05
    test_every: int = 5
    curated_fraction: float = 0.5
    withhold_class: int | None = None

    def __post_init__(self):
        if self.n_proteins < 1 or self.n_classes < 1:
            raise DataError("need at least one protein and one class")
        if not 1 <= self.motif_size <= 8:
            raise DataError("motif_size must be in 1..8")
        if self.msa_rows < 1 or self.dim < 2:
            raise DataError("msa_rows must be >= 1 and dim >= 2")
        if self.withhold_class is not None and not 0 <= self.withhold_class < self.n_classes:
            raise DataError("withhold_class is not a valid class index")


@dataclass
class FixtureProtein:
    seq: ProteinSequence
    class_index: int
    ec: ECLabel
    functional: tuple[int, ...]
    structural: tuple[int, ...]
    split: str
    curated: bool

    @property
    def id(self) -> str:
        return self.seq.id

    def labels(self, source: str = "curated") -> ResidueLabelSet:
        y = np.zeros(len(self.seq), dtype=np.int8)
        y[list(self.functional)] = 1
        return ResidueLabelSet(self.id, y, source)


@dataclass
class Fixture:
    params: FixtureParams
    classes: list[ECLabel]
    proteins: list[FixtureProtein]
    families: dict[str, AlignedFamily] = field(default_factory=dict)
    embeddings: list[EmbeddingMatrix] = field(default_factory=list)

    def split(self, name: str) -> list[FixtureProtein]:
        return [p for p in self.proteins if p.split == name]

    def ec_labels(self, split: str) -> dict[str, list[ECLabel]]:
        """Training labels hide the 4th digit of the withheld class."""
        out = {}
        for p in self.split(split):
            lab = p.ec
            if split == "train" and p.class_index == self.params.withhold_class:
                lab = lab.prefix3
            out[p.id] = [lab]
        return out

    def known_classes(self) -> list[ECLabel]:
        return sorted({lab for labs in self.ec_labels("train").values() for lab in labs if lab.is_full})


def class_label(c: int, n_classes: int) -> ECLabel:
    """Classes pair up under shared 3-digit prefixes; the last two stand alone."""
    paired = max(0, n_classes - 2)
    group = c // 2 if c < paired else paired // 2 + (c - paired)
    return ECLabel((1 + group % 6, 1 + group // 6, 1, 1 + c))


def make_fixture(params: FixtureParams | None = None) -> Fixture:
    params = params or FixtureParams()
    root = Rng(params.seed)
    motif_rng = root.child("fixture/motifs")
    motifs = []
    for _ in range(params.n_classes):
        offsets = np.sort(motif_rng.sample_without_replacement(8, params.motif_size))
        aas = [AMINO_ACIDS[motif_rng.randint(20)] for _ in offsets]
        motifs.append(list(zip(offsets.tolist(), aas)))
    classes = [class_label(c, params.n_classes) for c in range(params.n_classes)]

    seq_rng = root.child("fixture/sequences")
    proteins = []
    train_seen = [0] * params.n_classes
    for p in range(params.n_proteins):
        c = p % params.n_classes
        round_ = p // params.n_classes
        n = MIN_LEN + seq_rng.randint(MAX_LEN - MIN_LEN + 1)
        residues = [AMINO_ACIDS[i] for i in seq_rng.integers(20, n)]
        block = 8 * seq_rng.randint(n // 8)
        functional = []
        for off, aa in motifs[c]:
            residues[block + off] = aa
            functional.append(block + off)
        others = [i for i in range(n) if i not in set(functional)]
        picks = seq_rng.sample_without_replacement(len(others), params.structural_sites)
        structural = sorted(others[i] for i in picks)
        split = "test" if round_ % params.test_every == 0 else "train"
        curated = False
        if split == "train":
            # evenly spaced curated subset within each class
            k = train_seen[c]
            curated = int((k + 1) * params.curated_fraction) > int(k * params.curated_fraction)
            train_seen[c] += 1
        proteins.append(
            FixtureProtein(
                ProteinSequence(f"P{p:05d}", "".join(residues)),
                c,
                classes[c],
                tuple(functional),
                tuple(structural),
                split,
                curated,
            )
        )

    fx = Fixture(params, classes, proteins)
    msa_rng = root.child("fixture/msa")
    for prot in proteins:
        fx.families[prot.id] = _family(prot, params, msa_rng)
        fx.embeddings.append(synth_embed(prot.seq, params.dim, params.seed, prot.functional, params.signal))
    return fx


def _family(prot: FixtureProtein, params: FixtureParams, rng: Rng) -> AlignedFamily:
    n = len(prot.seq)
    conserved = np.zeros(n, dtype=bool)
    conserved[list(prot.functional) + list(prot.structural)] = True
    query = np.array(list(prot.seq.residues))
    rows = [prot.seq.residues]
    for _ in range(params.msa_rows - 1):
        row = query.copy()
        mutate = (rng.random(n) < params.mutation_rate) & ~conserved
        row[mutate] = [AMINO_ACIDS[i] for i in rng.integers(20, int(mutate.sum()))]
        gaps = (rng.random(n) < params.gap_rate) & ~conserved
        row[gaps] = "-"
        rows.append("".join(row))
    ids = (prot.id,) + tuple(f"{prot.id}_h{r}" for r in range(1, params.msa_rows))
    return AlignedFamily(ids, tuple(rows))


def write_fixture(fx: Fixture, out: str | Path) -> dict[str, str]:
    """Write every fixture artefact under ``out``; returns the path map."""
    out = Path(out)
    (out / "msa").mkdir(parents=True, exist_ok=True)
    paths = {
        "sequences": "sequences.fasta",
        "msa_dir": "msa",
        "curated_labels": "labels.curated.tsv",
        "truth_labels": "labels.test.tsv",
        "functional_labels": "labels.functional.tsv",
        "ec_train": "ec.train.tsv",
        "ec_test": "ec.test.tsv",
        "embeddings": "embeddings.sleb",
        "known_classes": "known_classes.txt",
    }
    write_fasta([p.seq for p in fx.proteins], out / paths["sequences"])
    for p in fx.split("train"):
        (out / "msa" / f"{p.id}.a2m").write_text(format_aligned_fasta(fx.families[p.id]), encoding="utf-8")
    write_labels_tsv([p.labels() for p in fx.proteins if p.curated], out / paths["curated_labels"])
    write_labels_tsv([p.labels() for p in fx.split("test")], out / paths["truth_labels"])
    write_labels_tsv([p.labels() for p in fx.proteins], out / paths["functional_labels"])
    (out / paths["ec_train"]).write_text(format_ec_tsv(fx.ec_labels("train")), encoding="utf-8")
    (out / paths["ec_test"]).write_text(format_ec_tsv(fx.ec_labels("test")), encoding="utf-8")
    write_store(fx.embeddings, out / paths["embeddings"])
    (out / paths["known_classes"]).write_text("".join(f"{c}\n" for c in fx.known_classes()), encoding="utf-8")
    (out / "fixture.json").write_text(json.dumps(asdict(fx.params), indent=2, sort_keys=True) + "\n")
    return {k: str(out / v) for k, v in paths.items()}
