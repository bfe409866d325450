"""Losses and target transforms. Every loss returns ``(value, d value / d logits)``."""

from __future__ import annotations

import numpy as np

from ..errors import DataError
from ..rng import Rng
from .network import log_softmax, softmax

CLAMP = 1e-12


def bce_loss(
    p: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """Weighted mean binary cross entropy on sigmoid outputs.

    The gradient is taken with respect to the pre-sigmoid logit,
    ``w * (p - y) / sum(w)``. With all weights zero the loss is 0.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if p.shape != y.shape:
        raise DataError(f"prediction/label length mismatch: {p.shape} vs {y.shape}")
    w = np.ones_like(p) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape != p.shape:
        raise DataError("weights must match predictions")
    if (w < 0).any():
        raise DataError("sample weights must be non-negative")
    if not ((p >= 0.0) & (p <= 1.0)).all():
        raise DataError("probabilities must lie in [0, 1]")
    pc = np.clip(p, CLAMP, 1.0 - CLAMP)
    total = w.sum()
    if total == 0.0:
        return 0.0, np.zeros_like(p)
    per = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    loss = float(np.sum(w * per) / total)
    grad = w * (p - y) / total
    return loss, grad


def smoothed_ce_loss(
    logits: np.ndarray,
    targets: np.ndarray,
    class_weights: np.ndarray | None = None,
    sample_weights: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Batch mean of ``phi(argmax target) * CE(target, softmax(logits))``.

    ``sample_weights`` multiplies each row further; the mean still divides by
    the batch size.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if logits.shape != targets.shape or logits.ndim != 2:
        raise DataError(f"logits {logits.shape} and targets {targets.shape} must be equal 2-D shapes")
    if (targets < 0).any() or not np.allclose(targets.sum(axis=1), 1.0, rtol=0, atol=1e-9):
        raise DataError("target rows must be probability distributions")
    b, n = logits.shape
    phi = np.ones(n) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    if phi.shape != (n,) or (phi < 0).any():
        raise DataError("class weights must be a non-negative vector over classes")
    row_w = phi[np.argmax(targets, axis=1)]
    if sample_weights is not None:
        row_w = row_w * np.asarray(sample_weights, dtype=np.float64)
    per = -(targets * log_softmax(logits)).sum(axis=1)
    loss = float(np.sum(row_w * per) / b)
    grad = row_w[:, None] * (softmax(logits) - targets) / b
    return loss, grad


def label_smooth(onehot: np.ndarray, eps: float) -> np.ndarray:
    """``(1 - eps) * onehot + eps / N``; works row-wise on a matrix too."""
    if not 0.0 <= eps < 1.0:
        raise DataError(f"label smoothing must be in [0, 1), got {eps}")
    onehot = np.asarray(onehot, dtype=np.float64)
    n = onehot.shape[-1]
    return (1.0 - eps) * onehot + eps / n


def one_hot(index: np.ndarray, n: int) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64)
    out = np.zeros((index.size, n))
    out[np.arange(index.size), index] = 1.0
    return out


def mixup(
    x_a: np.ndarray,
    t_a: np.ndarray,
    x_b: np.ndarray,
    t_b: np.ndarray,
    alpha: float,
    rng: Rng,
    lam: float | None = None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Convex blend of two batches with one ``lam ~ Beta(alpha, alpha)``.

    Passing ``lam`` skips the draw (used by tests and to disable mixing).
    """
    if x_a.shape != x_b.shape or t_a.shape != t_b.shape or len(x_a) != len(t_a):
        raise DataError("mixup batches must have matching shapes")
    if lam is None:
        lam = rng.beta(alpha, alpha) if alpha > 0 else 1.0
    return lam * x_a + (1.0 - lam) * x_b, lam * t_a + (1.0 - lam) * t_b, lam
