"""Function-aware pooling and the EC-number classifier."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from functools import total_ordering
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .embed import EmbeddingMatrix
from .errors import ConfigError, DataError, FormatError, NumericalError, ParseError
from .nn import AdamW, LayerNorm, Linear, Network, ReLU, Residual, SoftmaxHead, label_smooth, one_hot, smoothed_ce_loss
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .rng import Rng

log = logging.getLogger(__name__)


@total_ordering
@dataclass(frozen=True)
class ECLabel:
    digits: tuple[int, ...]

    def __post_init__(self):
        if len(self.digits) not in (3, 4):
            raise DataError(f"EC label needs 3 or 4 components, got {self.digits}")

    @classmethod
    def parse(cls, text: str) -> ECLabel:
        parts = text.strip().split(".")
        if parts and parts[-1] in ("-", "n"):
            parts = parts[:-1]
        try:
            digits = tuple(int(p) for p in parts)
        except ValueError:
            raise DataError(f"malformed EC number {text!r}") from None
        if len(digits) not in (3, 4) or any(d < 0 for d in digits):
            raise DataError(f"malformed EC number {text!r}")
        return cls(digits)

    @property
    def is_full(self) -> bool:
        return len(self.digits) == 4

    @property
    def prefix3(self) -> ECLabel:
        return ECLabel(self.digits[:3])

    def matches(self, other: ECLabel) -> bool:
        """True when the shorter of the two is a prefix of the longer."""
        n = min(len(self.digits), len(other.digits))
        return self.digits[:n] == other.digits[:n]

    def __lt__(self, other: ECLabel) -> bool:
        return self.digits < other.digits

    def __str__(self) -> str:
        return ".".join(str(d) for d in self.digits)


@dataclass
class PooledRepresentation:
    protein_id: str
    vector: np.ndarray
    selected: np.ndarray  # residue indices, highest score first

    @property
    def z(self) -> int:
        return len(self.selected)


def selection_size(n: int, keep: float = 0.2, fixed_k: int | None = None) -> int:
    if fixed_k is not None:
        if not 1 <= fixed_k <= n:
            raise DataError(f"fixed_k={fixed_k} is outside 1..{n}")
        return fixed_k
    if not 0.0 < keep <= 1.0:
        raise DataError(f"keep fraction must be in (0, 1], got {keep}")
    return max(1, math.ceil(keep * n))


def select_residues(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k highest scores; ties go to the lower index."""
    idx = np.arange(len(scores))
    return np.lexsort((idx, -np.asarray(scores)))[:k]


def pool(
    matrix: EmbeddingMatrix,
    scores: np.ndarray,
    keep: float = 0.2,
    fixed_k: int | None = None,
) -> PooledRepresentation:
    """Score-weighted mean of the top-k residue embeddings.

    ``E = (1/Z) * sum_{i in top-k} f_i * e_i`` with ``Z = k``. Terms are
    summed in descending-score order, so the result does not depend on where
    the selected residues sit in the sequence.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (matrix.n_residues,):
        raise DataError(f"{matrix.protein_id}: {len(scores)} scores for {matrix.n_residues} residues")
    k = selection_size(matrix.n_residues, keep, fixed_k)
    sel = select_residues(scores, k)
    rows = np.asarray(matrix.rows, dtype=np.float64)[sel]
    acc = np.zeros(matrix.dim)
    for w, e in zip(scores[sel], rows):
        acc += w * e
    return PooledRepresentation(matrix.protein_id, acc / k, sel)


def mean_pool(matrix: EmbeddingMatrix) -> PooledRepresentation:
    """Unweighted average over all residues (the baseline that ignores function)."""
    rows = np.asarray(matrix.rows, dtype=np.float64)
    return PooledRepresentation(matrix.protein_id, rows.mean(axis=0), np.arange(matrix.n_residues))


def class_weights(labels: Sequence[ECLabel], vocab: Sequence[ECLabel], alpha: float = 1.0) -> np.ndarray:
    """Inverse-frequency weights ``(total / (N * count_j)) ** alpha``."""
    if not labels:
        raise DataError("cannot weight classes of an empty training set")
    pos = {c: i for i, c in enumerate(vocab)}
    counts = np.zeros(len(vocab))
    for lab in labels:
        counts[pos[lab]] += 1
    if (counts == 0).any():
        missing = [str(c) for c, n in zip(vocab, counts) if n == 0]
        raise DataError(f"classes without training examples: {', '.join(missing)}")
    return (counts.sum() / (len(vocab) * counts)) ** alpha


@dataclass
class Stage2Config:
    keep_fraction: float = 0.2
    batch_size: int = 4096
    lr: float = 1e-5
    weight_decay: float = 0.0
    iterations: int = 10000
    label_smoothing: float = 0.5
    mixup_alpha: float = 0.2
    class_weight_exponent: float = 1.0
    hidden: int = 4096
    three_digit_head: bool = True
    seed: int = 0
    log_every: int = 0

    def __post_init__(self):
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ConfigError("keep_fraction must be in (0, 1]")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label_smoothing must be in [0, 1)")
        if self.batch_size <= 0 or self.hidden <= 0 or self.iterations < 0:
            raise ConfigError("batch_size and hidden must be positive, iterations >= 0")
        if self.mixup_alpha < 0:
            raise ConfigError("mixup_alpha must be >= 0")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Stage2Config:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown stage2 keys: {', '.join(sorted(unknown))}")
        return cls(**d)


def trunk_layers(dim: int, hidden: int) -> list:
    return [
        Linear(dim, hidden),
        ReLU(),
        LayerNorm(hidden),
        Residual((Linear(hidden, hidden), ReLU(), LayerNorm(hidden))),
    ]


def head_layers(hidden: int, classes: int) -> list:
    return [Linear(hidden, classes), SoftmaxHead(classes)]


@dataclass
class ECClassifier:
    trunk: Network
    head4: Network
    head3: Network | None
    vocab4: list[ECLabel]
    vocab3: list[ECLabel]
    phi: np.ndarray
    config: Stage2Config

    @classmethod
    def initial(
        cls, dim: int, vocab4: Sequence[ECLabel], vocab3: Sequence[ECLabel], phi: np.ndarray, config: Stage2Config
    ) -> ECClassifier:
        rng = Rng(config.seed).child("stage2/init")
        trunk = Network(trunk_layers(dim, config.hidden)).init(rng)
        head4 = Network(head_layers(config.hidden, len(vocab4))).init(rng)
        head3 = Network(head_layers(config.hidden, len(vocab3))).init(rng) if config.three_digit_head else None
        return cls(trunk, head4, head3, list(vocab4), list(vocab3), np.asarray(phi, dtype=np.float64), config)

    @property
    def dim(self) -> int:
        return self.trunk.n_in

    @property
    def params(self) -> list[np.ndarray]:
        out = self.trunk.params + self.head4.params
        if self.head3 is not None:
            out = out + self.head3.params
        return out

    def probabilities(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise DataError(f"pooled vector dim {x.shape[1]} != model input {self.dim}")
        h = self.trunk(x)
        p4 = self.head4(h)
        p3 = self.head3(h) if self.head3 is not None else None
        return p4, p3

    def save(self, path: str | Path) -> None:
        header = {
            "kind": "stage2",
            "trunk": self.trunk.spec_dict(),
            "head4": self.head4.spec_dict(),
            "head3": self.head3.spec_dict() if self.head3 is not None else None,
            "vocab4": [str(c) for c in self.vocab4],
            "vocab3": [str(c) for c in self.vocab3],
            "phi": [float(v) for v in self.phi],
            "config": asdict(self.config),
        }
        save_checkpoint(path, header, self.params)

    @classmethod
    def load(cls, path: str | Path) -> ECClassifier:
        header, arrays = load_checkpoint(path)
        if header.get("kind") != "stage2":
            raise FormatError(f"{path}: not a stage-2 checkpoint")
        trunk = Network.from_spec_dict(header["trunk"])
        head4 = Network.from_spec_dict(header["head4"])
        head3 = Network.from_spec_dict(header["head3"]) if header["head3"] is not None else None
        nets = [trunk, head4] + ([head3] if head3 is not None else [])
        if len(arrays) != sum(len(n.params) for n in nets):
            raise FormatError(f"{path}: parameter count does not match the stored layers")
        pos = 0
        for net in nets:
            k = len(net.params)
            net.params = arrays[pos : pos + k]
            if [p.shape for p in net.params] != net.shapes:
                raise FormatError(f"{path}: parameter shapes do not match the stored layers")
            pos += k
        return cls(
            trunk,
            head4,
            head3,
            [ECLabel.parse(s) for s in header["vocab4"]],
            [ECLabel.parse(s) for s in header["vocab3"]],
            np.asarray(header["phi"], dtype=np.float64),
            Stage2Config.from_dict(header["config"]),
        )


def stage2_loss(
    model: ECClassifier,
    x: np.ndarray,
    t4: np.ndarray,
    t3: np.ndarray | None,
    w4: np.ndarray | None = None,
) -> tuple[float, list[np.ndarray]]:
    """phi-weighted soft-target CE on the 4-digit head plus plain CE on the 3-digit head."""
    h, tcache = model.trunk.forward(x)
    _, c4 = model.head4.forward(h)
    loss4, g4 = smoothed_ce_loss(c4[-1][1], t4, model.phi, w4)
    grads4, gh = model.head4.backward(c4, g4, need_input=True)
    loss = loss4
    grads3: list[np.ndarray] = []
    if model.head3 is not None and t3 is not None:
        _, c3 = model.head3.forward(h)
        loss3, g3 = smoothed_ce_loss(c3[-1][1], t3)
        grads3, gh3 = model.head3.backward(c3, g3, need_input=True)
        gh = gh + gh3
        loss += loss3
    grads_t, _ = model.trunk.backward(tcache, gh)
    return loss, grads_t + grads4 + grads3


@dataclass
class Stage2Data:
    x: np.ndarray
    y4: np.ndarray  # vocab4 index, -1 when only the 3-digit class is known
    y3: np.ndarray
    vocab4: list[ECLabel]
    vocab3: list[ECLabel]


def build_training_data(samples: Iterable[tuple[np.ndarray, ECLabel]]) -> Stage2Data:
    """One row per (pooled vector, label) pair; 3-digit labels train only that head."""
    samples = list(samples)
    if not samples:
        raise DataError("no stage-2 training samples")
    vocab4 = sorted({lab for _, lab in samples if lab.is_full})
    vocab3 = sorted({lab.prefix3 for _, lab in samples})
    if not vocab4:
        raise DataError("stage-2 training needs at least one 4-digit EC label")
    i4 = {c: i for i, c in enumerate(vocab4)}
    i3 = {c: i for i, c in enumerate(vocab3)}
    x = np.stack([np.asarray(v, dtype=np.float64) for v, _ in samples])
    y4 = np.array([i4[lab] if lab.is_full else -1 for _, lab in samples], dtype=np.int64)
    y3 = np.array([i3[lab.prefix3] for _, lab in samples], dtype=np.int64)
    return Stage2Data(x, y4, y3, vocab4, vocab3)


def _soft_targets(y: np.ndarray, n: int, eps: float) -> np.ndarray:
    t = label_smooth(one_hot(np.maximum(y, 0), n), eps)
    t[y < 0] = 1.0 / n  # placeholder rows; their loss weight is zero
    return t


def mix_batch(
    x_a, t4_a, m_a, t3_a, x_b, t4_b, m_b, t3_b, lam: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Mixup that also handles rows lacking a 4-digit target (mask 0)."""
    x = lam * x_a + (1.0 - lam) * x_b
    t3 = lam * t3_a + (1.0 - lam) * t3_b
    t4 = lam * t4_a + (1.0 - lam) * t4_b
    w4 = np.ones(len(x))
    only_a = (m_a > 0) & (m_b == 0)
    only_b = (m_a == 0) & (m_b > 0)
    neither = (m_a == 0) & (m_b == 0)
    t4[only_a] = t4_a[only_a]
    w4[only_a] = lam
    t4[only_b] = t4_b[only_b]
    w4[only_b] = 1.0 - lam
    t4[neither] = t4_a[neither]
    w4[neither] = 0.0
    return x, t4, t3, w4


def train_stage2(
    config: Stage2Config,
    samples: Iterable[tuple[np.ndarray, ECLabel]],
    mixup_lam: float | None = None,
) -> tuple[ECClassifier, list[float]]:
    """Train both heads with label smoothing, mixup and inverse-frequency weights.

    ``mixup_lam`` pins the mixing coefficient instead of drawing it.
    """
    data = build_training_data(samples)
    labelled = data.y4 >= 0
    phi = class_weights([data.vocab4[i] for i in data.y4[labelled]], data.vocab4, config.class_weight_exponent)
    model = ECClassifier.initial(data.x.shape[1], data.vocab4, data.vocab3, phi, config)
    opt = AdamW(model.params, config.lr, config.weight_decay)
    rng = Rng(config.seed).child("stage2/batches")
    mix_rng = Rng(config.seed).child("stage2/mixup")
    n = len(data.x)
    t4_all = _soft_targets(data.y4, len(data.vocab4), config.label_smoothing)
    t3_all = _soft_targets(data.y3, len(data.vocab3), config.label_smoothing)
    m_all = labelled.astype(np.float64)
    trace: list[float] = []
    params = model.params
    for it in range(config.iterations):
        a = rng.integers(n, config.batch_size)
        b = rng.integers(n, config.batch_size)
        if mixup_lam is not None:
            lam = mixup_lam
        else:
            lam = mix_rng.beta(config.mixup_alpha, config.mixup_alpha) if config.mixup_alpha > 0 else 1.0
        x, t4, t3, w4 = mix_batch(
            data.x[a], t4_all[a], m_all[a], t3_all[a], data.x[b], t4_all[b], m_all[b], t3_all[b], lam
        )
        loss, grads = stage2_loss(model, x, t4, t3 if model.head3 is not None else None, w4)
        if not math.isfinite(loss):
            raise NumericalError(f"stage-2 loss is not finite at iteration {it}")
        opt.step(params, grads)
        trace.append(loss)
        if config.log_every and (it + 1) % config.log_every == 0:
            log.info("stage2 iter %d loss %.5f", it + 1, loss)
    return model, trace


def predict_ec(model: ECClassifier, vector: np.ndarray, top_k: int = 1) -> list[tuple[ECLabel, float]]:
    p4, _ = model.probabilities(vector)
    p = p4[0]
    order = np.lexsort((np.arange(len(p)), -p))[:top_k]
    return [(model.vocab4[i], float(p[i])) for i in order]


def merged_candidates(model: ECClassifier, known: Iterable[ECLabel]) -> tuple[np.ndarray, np.ndarray]:
    """Indices into the 4-digit and 3-digit heads that take part in the merged head."""
    known = {k for k in known if k.is_full}
    idx4 = np.array([i for i, c in enumerate(model.vocab4) if c in known], dtype=np.int64)
    covered = {c.prefix3 for c in known}
    if model.head3 is None:
        idx3 = np.zeros(0, dtype=np.int64)
    else:
        idx3 = np.array([i for i, c in enumerate(model.vocab3) if c not in covered], dtype=np.int64)
    return idx4, idx3


def merged_predict(
    model: ECClassifier, vector: np.ndarray, known: Iterable[ECLabel]
) -> tuple[ECLabel, float]:
    """Argmax over known 4-digit neurons and the 3-digit neurons of uncovered prefixes.

    Raw softmax values of the two heads are compared directly.
    """
    idx4, idx3 = merged_candidates(model, known)
    if len(idx4) + len(idx3) == 0:
        raise DataError("merged head has no candidate classes")
    p4, p3 = model.probabilities(vector)
    best: tuple[float, ECLabel] | None = None
    for i in idx4:
        if best is None or p4[0, i] > best[0]:
            best = (float(p4[0, i]), model.vocab4[i])
    for i in idx3:
        if best is None or p3[0, i] > best[0]:  # type: ignore[index]
            best = (float(p3[0, i]), model.vocab3[i])  # type: ignore[index]
    assert best is not None
    return best[1], best[0]


# -- TSV interchange ---------------------------------------------------------


def parse_ec_tsv(text: str) -> dict[str, list[ECLabel]]:
    """``protein_id \\t ec`` rows; repeated ids give multi-label truth."""
    out: dict[str, list[ECLabel]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.rstrip("\r").split("\t")
        if len(parts) < 2:
            raise ParseError("expected protein_id<TAB>ec", lineno)
        try:
            lab = ECLabel.parse(parts[1])
        except DataError as exc:
            raise ParseError(str(exc), lineno) from None
        labs = out.setdefault(parts[0], [])
        if lab not in labs:
            labs.append(lab)
    return out


def read_ec_tsv(path: str | Path) -> dict[str, list[ECLabel]]:
    return parse_ec_tsv(Path(path).read_text(encoding="utf-8"))


def format_ec_tsv(labels: dict[str, Sequence[ECLabel]]) -> str:
    return "".join(f"{pid}\t{lab}\n" for pid, labs in labels.items() for lab in labs)
