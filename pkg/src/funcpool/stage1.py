"""Functional-residue classifier trained on curated plus gated pseudo labels."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .conservation import PolicyScores, ResidueLabelSet, binary_prf
from .embed import EmbeddingMatrix, EmbeddingStore
from .errors import ConfigError, DataError, FormatError, NumericalError
from .nn import AdamW, Linear, Network, ReLU, SigmoidHead, bce_loss
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .rng import Rng

log = logging.getLogger(__name__)

SCORE_CHUNK = 1024


@dataclass
class Stage1Config:
    lam: float = 1.0
    tau: float = 0.9
    tokens_per_iter: int = 8192
    iterations: int = 10000
    lr: float = 1e-5
    weight_decay: float = 0.01
    hidden: int = 256
    sup_fraction: float = 0.5
    seed: int = 0
    log_every: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")
        if not 0.5 <= self.tau < 1.0:
            raise ConfigError("tau must be in [0.5, 1)")
        if self.tokens_per_iter <= 0 or self.tokens_per_iter % 2:
            raise ConfigError("tokens_per_iter must be a positive even number")
        if self.iterations < 0 or self.hidden <= 0:
            raise ConfigError("iterations must be >= 0 and hidden > 0")
        if not 0.0 < self.sup_fraction <= 1.0:
            raise ConfigError("sup_fraction must be in (0, 1]")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Stage1Config:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown stage1 keys: {', '.join(sorted(unknown))}")
        return cls(**d)


def residue_layers(dim: int, hidden: int = 256) -> list:
    return [Linear(dim, hidden), ReLU(), Linear(hidden, 1), SigmoidHead()]


@dataclass
class ResidueClassifier:
    network: Network
    config: Stage1Config

    @classmethod
    def initial(cls, dim: int, config: Stage1Config) -> ResidueClassifier:
        net = Network(residue_layers(dim, config.hidden)).init(Rng(config.seed).child("stage1/init"))
        return cls(net, config)

    @property
    def dim(self) -> int:
        return self.network.n_in

    def save(self, path: str | Path) -> None:
        header = {"kind": "stage1", "layers": self.network.spec_dict(), "config": asdict(self.config)}
        save_checkpoint(path, header, self.network.params)

    @classmethod
    def load(cls, path: str | Path) -> ResidueClassifier:
        header, arrays = load_checkpoint(path)
        if header.get("kind") != "stage1":
            raise FormatError(f"{path}: not a stage-1 checkpoint")
        return cls(Network.from_spec_dict(header["layers"], arrays), Stage1Config.from_dict(header["config"]))


def confidence_gate(f: np.ndarray | float, tau: float) -> np.ndarray:
    """1 where ``max(f, 1 - f) > tau``, else 0."""
    f = np.asarray(f, dtype=np.float64)
    return (np.maximum(f, 1.0 - f) > tau).astype(np.float64)


@dataclass
class Stage1Step:
    loss: float
    grads: list[np.ndarray]
    sup_loss: float
    msa_loss: float
    n_gated: int


def stage1_loss(
    network: Network,
    sup_x: np.ndarray,
    sup_y: np.ndarray,
    msa_x: np.ndarray,
    msa_y: np.ndarray,
    lam: float,
    tau: float,
) -> Stage1Step:
    """Supervised BCE plus ``lam`` times the gated pseudo-label BCE.

    The gate is decided on a separate forward pass and then held constant;
    only the supervised rows and the pseudo rows that pass it enter the
    gradient pass, so a gated-out row has no influence on any gradient.
    """
    n_sup = len(sup_x)
    if n_sup == 0:
        raise DataError("supervised batch is empty")
    keep = np.zeros(0, dtype=bool)
    if lam > 0 and len(msa_x):
        keep = confidence_gate(network(msa_x)[:, 0], tau) > 0
    active_x = msa_x[keep] if keep.any() else msa_x[:0]
    active_y = msa_y[keep] if keep.any() else msa_y[:0]
    x = np.concatenate([sup_x, active_x]) if len(active_x) else sup_x
    p, cache = network.forward(x)
    p = p[:, 0]
    sup_loss, g_sup = bce_loss(p[:n_sup], sup_y)
    msa_loss = 0.0
    g = g_sup
    if len(active_x):
        msa_loss, g_msa = bce_loss(p[n_sup:], active_y)
        g = np.concatenate([g_sup, lam * g_msa])
    grads, _ = network.backward(cache, g[:, None])
    return Stage1Step(sup_loss + lam * msa_loss, grads, sup_loss, msa_loss, int(len(active_x)))


def _gather(
    store: EmbeddingStore, samples: Sequence[tuple[str, int, int]]
) -> tuple[np.ndarray, np.ndarray]:
    cache: dict[str, EmbeddingMatrix] = {}
    x = np.empty((len(samples), store.dim), dtype=np.float64)
    y = np.empty(len(samples), dtype=np.float64)
    for r, (pid, pos, label) in enumerate(samples):
        m = cache.get(pid)
        if m is None:
            if pid not in store:
                raise DataError(f"labelled protein {pid!r} has no embedding")
            m = cache[pid] = store.lookup(pid)
        if not 0 <= pos < m.n_residues:
            raise DataError(f"{pid}: label position {pos} outside {m.n_residues} residues")
        x[r] = m.rows[pos]
        y[r] = label
    return x, y


def label_samples(label_sets: Sequence[ResidueLabelSet]) -> list[tuple[str, int, int]]:
    return [(ls.protein_id, i, int(y)) for ls in label_sets for i, y in enumerate(ls.labels)]


def _check_lengths(store: EmbeddingStore, label_sets: Sequence[ResidueLabelSet]) -> None:
    for ls in label_sets:
        if ls.protein_id not in store:
            raise DataError(f"labelled protein {ls.protein_id!r} has no embedding")
        n = store.index[ls.protein_id][1]
        if n != len(ls.labels):
            raise DataError(f"{ls.protein_id}: {len(ls.labels)} labels for {n} residues")


def train_stage1(
    config: Stage1Config,
    store: EmbeddingStore,
    sup_labels: Sequence[ResidueLabelSet],
    msa_samples: Sequence[tuple[str, int, int]],
) -> tuple[ResidueClassifier, list[float]]:
    """AdamW on :func:`stage1_loss` with seeded with-replacement sampling.

    ``msa_samples`` are ``(protein_id, position, label)`` triples, normally
    the output of :func:`funcpool.conservation.balance_pseudo_dataset`.
    """
    _check_lengths(store, sup_labels)
    sup_x, sup_y = _gather(store, label_samples(sup_labels))
    msa_x, msa_y = _gather(store, list(msa_samples))
    if len(sup_x) == 0:
        raise DataError("no curated residue labels to train on")
    model = ResidueClassifier.initial(store.dim, config)
    net = model.network
    opt = AdamW(net.params, config.lr, config.weight_decay)
    rng = Rng(config.seed).child("stage1/batches")
    n_sup_batch = int(round(config.tokens_per_iter * config.sup_fraction))
    n_msa_batch = config.tokens_per_iter - n_sup_batch
    trace: list[float] = []
    for it in range(config.iterations):
        si = rng.integers(len(sup_x), n_sup_batch)
        if len(msa_x) and n_msa_batch:
            mi = rng.integers(len(msa_x), n_msa_batch)
            mx, my = msa_x[mi], msa_y[mi]
        else:
            mx, my = msa_x[:0], msa_y[:0]
        step = stage1_loss(net, sup_x[si], sup_y[si], mx, my, config.lam, config.tau)
        if not math.isfinite(step.loss):
            raise NumericalError(f"stage-1 loss is not finite at iteration {it}")
        opt.step(net.params, step.grads)
        trace.append(step.loss)
        if config.log_every and (it + 1) % config.log_every == 0:
            log.info("stage1 iter %d loss %.5f (sup %.5f, msa %.5f, gated %d)",
                     it + 1, step.loss, step.sup_loss, step.msa_loss, step.n_gated)
    return model, trace


def score_residues(model: ResidueClassifier, matrix: EmbeddingMatrix) -> np.ndarray:
    """Per-residue functional probability.

    Each row's score is bit-identical however the matrix is chunked or
    extended with extra rows.
    """
    if matrix.dim != model.dim:
        raise DataError(f"{matrix.protein_id}: embedding dim {matrix.dim} != model input {model.dim}")
    x = np.asarray(matrix.rows, dtype=np.float64)
    out = np.empty(len(x))
    for start in range(0, len(x), SCORE_CHUNK):
        out[start : start + SCORE_CHUNK] = model.network(x[start : start + SCORE_CHUNK], exact_rows=True)[:, 0]
    return out


def eval_stage1(
    model: ResidueClassifier,
    store: EmbeddingStore,
    truth: Sequence[ResidueLabelSet],
    threshold: float = 0.5,
) -> PolicyScores:
    tp = fp = fn = 0
    for ls in truth:
        scores = score_residues(model, store.lookup(ls.protein_id))
        if len(scores) != len(ls.labels):
            raise DataError(f"{ls.protein_id}: {len(ls.labels)} labels for {len(scores)} residues")
        pred = scores > threshold
        gold = ls.labels == 1
        tp += int(np.sum(pred & gold))
        fp += int(np.sum(pred & ~gold))
        fn += int(np.sum(~pred & gold))
    return binary_prf(tp, fp, fn)


def format_scores_tsv(scored: Sequence[tuple[str, np.ndarray]]) -> str:
    lines = []
    for pid, scores in scored:
        for i, s in enumerate(scores):
            lines.append(f"{pid}\t{i}\t{float(s)!r}")
    return "".join(line + "\n" for line in lines)
