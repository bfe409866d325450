"""Finite-difference checks of the exact stage-1 and stage-2 layer stacks."""

from __future__ import annotations

from typing import Any

import numpy as np

from .errors import ConfigError
from .nn import GradCheckResult, Network, SigmoidHead, SoftmaxHead, bce_loss, grad_check, smoothed_ce_loss
from .nn.losses import label_smooth, one_hot
from .nn.network import layer_from_dict
from .rng import Rng
from .stage1 import ResidueClassifier, Stage1Config, stage1_loss
from .stage2 import ECClassifier, ECLabel, Stage2Config, stage2_loss

PRESETS = ("stage1", "stage2")
TOLERANCE = 1e-4


def _uniform(rng: Rng, *shape: int, scale: float = 1.0) -> np.ndarray:
    n = int(np.prod(shape))
    return (2.0 * rng.random(n) - 1.0).reshape(shape) * scale


def _scaled(loss_fn, corrupt: float):
    if corrupt == 1.0:
        return loss_fn

    def wrapped():
        loss, grads = loss_fn()
        return loss, [g * corrupt for g in grads]

    return wrapped


def check_stage1(seed: int = 0, dim: int = 16, hidden: int = 32, batch: int = 8, corrupt: float = 1.0) -> GradCheckResult:
    """Supervised plus gated pseudo-label BCE through Linear-ReLU-Linear-sigmoid.

    The gate threshold is lowered to 0.5 so the pseudo-label term is active.
    """
    rng = Rng(seed)
    model = ResidueClassifier.initial(dim, Stage1Config(hidden=hidden, seed=rng.child("init").next_u64()))
    net = model.network
    data = rng.child("data")
    sup_x = _uniform(data, batch, dim, scale=2.0)
    sup_y = (data.random(batch) < 0.5).astype(np.float64)
    msa_x = _uniform(data, batch, dim, scale=2.0)
    msa_y = (data.random(batch) < 0.5).astype(np.float64)

    def loss_fn():
        step = stage1_loss(net, sup_x, sup_y, msa_x, msa_y, lam=1.0, tau=0.5)
        return step.loss, step.grads

    return grad_check(net.params, _scaled(loss_fn, corrupt), rng.child("coords"))


def check_stage2(seed: int = 0, dim: int = 16, hidden: int = 32, batch: int = 8, corrupt: float = 1.0) -> GradCheckResult:
    """Residual LayerNorm trunk with phi-weighted smoothed CE on two heads."""
    rng = Rng(seed)
    vocab4 = [ECLabel((1, 1, 1, d)) for d in range(1, 5)] + [ECLabel((2, 1, 1, 1))]
    vocab3 = sorted({c.prefix3 for c in vocab4} | {ECLabel((3, 1, 1))})
    data = rng.child("data")
    phi = 0.5 + data.random(len(vocab4))
    config = Stage2Config(hidden=hidden, batch_size=batch, seed=rng.child("init").next_u64())
    model = ECClassifier.initial(dim, vocab4, vocab3, phi, config)
    x = _uniform(data, batch, dim, scale=2.0)
    t4 = label_smooth(one_hot(data.integers(len(vocab4), batch), len(vocab4)), 0.5)
    t3 = label_smooth(one_hot(data.integers(len(vocab3), batch), len(vocab3)), 0.5)
    w4 = data.random(batch)
    params = model.params

    def loss_fn():
        return stage2_loss(model, x, t4, t3, w4)

    return grad_check(params, _scaled(loss_fn, corrupt), rng.child("coords"))


def check_layers(spec: dict[str, Any] | list, seed: int = 0, corrupt: float = 1.0) -> GradCheckResult:
    """Grad-check an arbitrary layer stack given as JSON.

    ``spec`` is a list of layer objects or ``{"layers": [...], "batch": B}``.
    The loss is BCE for a sigmoid head, smoothed CE for a softmax head and
    half the sum of squares otherwise.
    """
    if isinstance(spec, list):
        spec = {"layers": spec}
    if not isinstance(spec, dict) or not isinstance(spec.get("layers"), list):
        raise ConfigError("grad-check spec needs a 'layers' list")
    unknown = set(spec) - {"layers", "batch"}
    if unknown:
        raise ConfigError(f"unknown grad-check keys: {', '.join(sorted(unknown))}")
    batch = int(spec.get("batch", 8))
    if batch < 1:
        raise ConfigError("batch must be positive")
    rng = Rng(seed)
    net = Network([layer_from_dict(d) for d in spec["layers"]]).init(rng.child("init"))
    data = rng.child("data")
    x = _uniform(data, batch, net.n_in, scale=2.0)
    head = net.head
    if isinstance(head, SigmoidHead):
        y = (data.random(batch) < 0.5).astype(np.float64)
    elif isinstance(head, SoftmaxHead):
        t = label_smooth(one_hot(data.integers(head.classes, batch), head.classes), 0.1)

    def loss_fn():
        out, cache = net.forward(x)
        if isinstance(head, SigmoidHead):
            loss, g = bce_loss(out[:, 0], y)
            g = g[:, None]
        elif isinstance(head, SoftmaxHead):
            loss, g = smoothed_ce_loss(cache[-1][1], t)
        else:
            loss, g = 0.5 * float(np.sum(out * out)), out
        grads, _ = net.backward(cache, g)
        return loss, grads

    return grad_check(net.params, _scaled(loss_fn, corrupt), rng.child("coords"))


def run_check(spec: str | dict | list, seed: int = 0, corrupt: float = 1.0) -> GradCheckResult:
    if spec == "stage1":
        return check_stage1(seed, corrupt=corrupt)
    if spec == "stage2":
        return check_stage2(seed, corrupt=corrupt)
    if isinstance(spec, str):
        raise ConfigError(f"unknown grad-check preset {spec!r}; use one of {PRESETS} or a JSON spec")
    return check_layers(spec, seed, corrupt)
