"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..rng import Rng

LossFn = Callable[[], tuple[float, Sequence[np.ndarray]]]


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    worst: tuple[int, int]  # (parameter array, flat index)


def rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(1e-8, abs(a) + abs(n))


def grad_check(
    params: list[np.ndarray],
    loss_fn: LossFn,
    rng: Rng,
    h: float = 1e-5,
    n_coords: int = 200,
) -> GradCheckResult:
    """Compare ``loss_fn``'s gradient with central differences.

    ``loss_fn`` closes over ``params`` and returns ``(loss, grads)``. Checks
    ``n_coords`` coordinates drawn without replacement, or all of them when
    there are fewer. Parameters are restored afterwards.
    """
    _, analytic = loss_fn()
    analytic = [np.array(g, dtype=np.float64, copy=True) for g in analytic]
    sizes = [p.size for p in params]
    offsets = np.cumsum([0] + sizes)
    total = int(offsets[-1])
    picks = rng.sample_without_replacement(total, min(n_coords, total))
    worst, worst_at = 0.0, (0, 0)
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        j = int(flat - offsets[k])
        view = params[k].reshape(-1)
        orig = view[j]
        view[j] = orig + h
        up, _ = loss_fn()
        view[j] = orig - h
        down, _ = loss_fn()
        view[j] = orig
        numeric = (up - down) / (2.0 * h)
        err = rel_error(float(analytic[k].reshape(-1)[j]), numeric)
        if err > worst:
            worst, worst_at = err, (k, j)
    return GradCheckResult(worst, len(picks), worst_at)
