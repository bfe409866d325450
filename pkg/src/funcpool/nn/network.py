"""Layer specs and a small float64 feed-forward network with manual backprop."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence, Union

import numpy as np

from ..errors import ConfigError, DataError
from ..rng import Rng

LN_EPS = 1e-5


@dataclass(frozen=True)
class Linear:
    n_in: int
    n_out: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class LayerNorm:
    width: int


@dataclass(frozen=True)
class Residual:
    layers: tuple


@dataclass(frozen=True)
class SigmoidHead:
    pass


@dataclass(frozen=True)
class SoftmaxHead:
    classes: int


Layer = Union[Linear, ReLU, LayerNorm, Residual, SigmoidHead, SoftmaxHead]
HEADS = (SigmoidHead, SoftmaxHead)


def layer_to_dict(layer: Layer) -> dict[str, Any]:
    if isinstance(layer, Linear):
        return {"type": "linear", "in": layer.n_in, "out": layer.n_out}
    if isinstance(layer, ReLU):
        return {"type": "relu"}
    if isinstance(layer, LayerNorm):
        return {"type": "layernorm", "width": layer.width}
    if isinstance(layer, Residual):
        return {"type": "residual", "layers": [layer_to_dict(x) for x in layer.layers]}
    if isinstance(layer, SigmoidHead):
        return {"type": "sigmoid"}
    if isinstance(layer, SoftmaxHead):
        return {"type": "softmax", "classes": layer.classes}
    raise TypeError(f"not a layer: {layer!r}")


def layer_from_dict(d: dict[str, Any]) -> Layer:
    kind = d.get("type")
    try:
        if kind == "linear":
            return Linear(int(d["in"]), int(d["out"]))
        if kind == "relu":
            return ReLU()
        if kind == "layernorm":
            return LayerNorm(int(d["width"]))
        if kind == "residual":
            return Residual(tuple(layer_from_dict(x) for x in d["layers"]))
        if kind == "sigmoid":
            return SigmoidHead()
        if kind == "softmax":
            return SoftmaxHead(int(d["classes"]))
    except KeyError as exc:
        raise ConfigError(f"layer {kind!r} is missing field {exc}") from None
    raise ConfigError(f"unknown layer type {kind!r}")


def _check_widths(layers: Sequence[Layer], width: int | None, top: bool) -> int | None:
    """Propagate widths through ``layers``; ``None`` means not yet known."""
    for i, layer in enumerate(layers):
        if isinstance(layer, Linear):
            if layer.n_in <= 0 or layer.n_out <= 0:
                raise ConfigError(f"linear layer widths must be positive: {layer}")
            if width is not None and width != layer.n_in:
                raise ConfigError(f"width mismatch: {width} feeds {layer}")
            width = layer.n_out
        elif isinstance(layer, LayerNorm):
            if width is not None and width != layer.width:
                raise ConfigError(f"width mismatch: {width} feeds {layer}")
            width = layer.width
        elif isinstance(layer, Residual):
            out = _check_widths(layer.layers, width, top=False)
            if width is None or out != width:
                raise ConfigError("residual block must map its input width to itself")
        elif isinstance(layer, HEADS):
            if not top or i != len(layers) - 1:
                raise ConfigError("output heads must be the final top-level layer")
            if isinstance(layer, SoftmaxHead) and width is not None and width != layer.classes:
                raise ConfigError(f"softmax head over {layer.classes} classes fed width {width}")
            if isinstance(layer, SigmoidHead) and width is not None and width != 1:
                raise ConfigError("sigmoid head expects a single logit")
    return width


def _input_width(layers: Sequence[Layer]) -> int | None:
    for layer in layers:
        if isinstance(layer, Linear):
            return layer.n_in
        if isinstance(layer, LayerNorm):
            return layer.width
        if isinstance(layer, Residual):
            w = _input_width(layer.layers)
            if w is not None:
                return w
    return None


def _param_shapes(layers: Sequence[Layer]) -> list[tuple[int, ...]]:
    shapes: list[tuple[int, ...]] = []
    for layer in layers:
        if isinstance(layer, Linear):
            shapes += [(layer.n_in, layer.n_out), (layer.n_out,)]
        elif isinstance(layer, LayerNorm):
            shapes += [(layer.width,), (layer.width,)]
        elif isinstance(layer, Residual):
            shapes += _param_shapes(layer.layers)
    return shapes


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    s = z - z.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def _matmul(x: np.ndarray, w: np.ndarray, exact_rows: bool) -> np.ndarray:
    # BLAS may round a row differently depending on how many rows share the
    # call; einsum's plain loops do not.
    if exact_rows:
        return np.einsum("bk,kn->bn", x, w)
    return x @ w


class Network:
    """A stack of layers plus its parameters, in layer order.

    ``forward`` returns head outputs (probabilities) when the stack ends in a
    head, raw activations otherwise. ``backward`` always starts from the
    gradient with respect to the pre-head logits.
    """

    def __init__(self, layers: Sequence[Layer], params: list[np.ndarray] | None = None):
        self.layers = tuple(layers)
        if not self.layers:
            raise ConfigError("network has no layers")
        self.n_in = _input_width(self.layers)
        if self.n_in is None:
            raise ConfigError("cannot infer the network input width")
        self.n_out = _check_widths(self.layers, self.n_in, top=True)
        self.shapes = _param_shapes(self.layers)
        if params is None:
            params = [np.zeros(s) for s in self.shapes]
        if [p.shape for p in params] != self.shapes:
            raise ConfigError("parameter shapes do not match the layer spec")
        self.params = [np.asarray(p, dtype=np.float64) for p in params]

    @property
    def head(self) -> Layer | None:
        last = self.layers[-1]
        return last if isinstance(last, HEADS) else None

    def spec_dict(self) -> list[dict[str, Any]]:
        return [layer_to_dict(x) for x in self.layers]

    @classmethod
    def from_spec_dict(cls, spec: list[dict[str, Any]], params: list[np.ndarray] | None = None) -> Network:
        return cls([layer_from_dict(d) for d in spec], params)

    def init(self, rng: Rng) -> Network:
        """Glorot-uniform weights, zero biases, unit LayerNorm gain."""
        self.params = []
        self._init(self.layers, rng)
        return self

    def _init(self, layers: Sequence[Layer], rng: Rng) -> None:
        for layer in layers:
            if isinstance(layer, Linear):
                bound = math.sqrt(6.0 / (layer.n_in + layer.n_out))
                u = rng.random(layer.n_in * layer.n_out).reshape(layer.n_in, layer.n_out)
                self.params.append((2.0 * u - 1.0) * bound)
                self.params.append(np.zeros(layer.n_out))
            elif isinstance(layer, LayerNorm):
                self.params.append(np.ones(layer.width))
                self.params.append(np.zeros(layer.width))
            elif isinstance(layer, Residual):
                self._init(layer.layers, rng)

    def copy(self) -> Network:
        return Network(self.layers, [p.copy() for p in self.params])

    # -- forward ---------------------------------------------------------

    def forward(self, x: np.ndarray, exact_rows: bool = False) -> tuple[np.ndarray, list]:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise DataError(f"expected input of shape (B, {self.n_in}), got {x.shape}")
        if not np.isfinite(x).all():
            raise DataError("non-finite network input")
        y, cache, _ = self._forward(self.layers, 0, x, exact_rows)
        return y, cache

    def __call__(self, x: np.ndarray, exact_rows: bool = False) -> np.ndarray:
        return self.forward(x, exact_rows)[0]

    def logits(self, x: np.ndarray, exact_rows: bool = False) -> np.ndarray:
        out, cache = self.forward(x, exact_rows)
        if self.head is None:
            return out
        return cache[-1][1]  # the head entry keeps its input logits

    def _forward(self, layers, pi: int, x: np.ndarray, exact: bool):
        caches = []
        for layer in layers:
            if isinstance(layer, Linear):
                w, b = self.params[pi], self.params[pi + 1]
                caches.append(("linear", x, pi))
                x = _matmul(x, w, exact)
                x += b
                pi += 2
            elif isinstance(layer, ReLU):
                mask = x > 0
                caches.append(("relu", mask))
                x = x * mask
            elif isinstance(layer, LayerNorm):
                g, s = self.params[pi], self.params[pi + 1]
                mu = x.mean(axis=1, keepdims=True)
                xc = x - mu
                var = (xc * xc).mean(axis=1, keepdims=True)
                inv = 1.0 / np.sqrt(var + LN_EPS)
                xhat = xc * inv
                caches.append(("layernorm", xhat, inv, pi))
                x = xhat * g + s
                pi += 2
            elif isinstance(layer, Residual):
                inner, inner_cache, pi = self._forward(layer.layers, pi, x, exact)
                caches.append(("residual", inner_cache, layer))
                x = x + inner
            elif isinstance(layer, SigmoidHead):
                caches.append(("head", x))
                x = sigmoid(x)
            elif isinstance(layer, SoftmaxHead):
                caches.append(("head", x))
                x = softmax(x)
        return x, caches, pi

    # -- backward --------------------------------------------------------

    def backward(
        self, cache: list, grad_logits: np.ndarray, need_input: bool = False
    ) -> tuple[list[np.ndarray], np.ndarray | None]:
        grads: list[np.ndarray | None] = [None] * len(self.params)
        g = self._backward(self.layers, cache, np.asarray(grad_logits, dtype=np.float64), grads, need_input)
        return grads, g  # type: ignore[return-value]

    def _backward(self, layers, caches, g, grads, need_input: bool = True):
        for depth in range(len(layers) - 1, -1, -1):
            entry = caches[depth]
            kind = entry[0]
            if kind == "linear":
                _, x, pi = entry
                grads[pi] = x.T @ g
                grads[pi + 1] = g.sum(axis=0)
                if depth == 0 and not need_input:
                    return None
                g = g @ self.params[pi].T
            elif kind == "relu":
                g = g * entry[1]
            elif kind == "layernorm":
                _, xhat, inv, pi = entry
                grads[pi] = (g * xhat).sum(axis=0)
                grads[pi + 1] = g.sum(axis=0)
                dxhat = g * self.params[pi]
                g = inv * (
                    dxhat
                    - dxhat.mean(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
                )
            elif kind == "residual":
                _, inner_cache, layer = entry
                g = g + self._backward(layer.layers, inner_cache, g, grads, True)
            # heads: g is already the gradient w.r.t. their input logits
        return g


def flat_size(params: Sequence[np.ndarray]) -> int:
    return int(sum(p.size for p in params))
