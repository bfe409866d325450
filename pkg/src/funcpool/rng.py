"""Deterministic splitmix64 random streams.

Every random decision in the package flows through :class:`Rng` so that a
single integer seed reproduces a run bit for bit, independent of numpy's
generator implementations.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB
_INV_2_53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    """The splitmix64 output function (finalizer) on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MUL1) & MASK64
    z = ((z ^ (z >> 27)) * _MUL2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MUL1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MUL2)
    return z ^ (z >> np.uint64(31))


def name_hash(name: str) -> int:
    return int.from_bytes(hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest(), "little")


def combine(*parts: int) -> int:
    """Fold several integers into one well-mixed 64-bit seed."""
    h = 0x6A09E667F3BCC908
    for p in parts:
        h = mix64(h ^ (int(p) & MASK64)) ^ GOLDEN
    return mix64(h)


class Rng:
    """A splitmix64 stream.

    The k-th output is ``mix64(seed + k * GOLDEN)``, which lets bulk draws be
    vectorized without changing the sequence.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.state = self.seed

    def child(self, name: str) -> Rng:
        """Independent named sub-stream; does not advance this stream."""
        return Rng(combine(self.seed, name_hash(name)))

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def u64(self, n: int) -> np.ndarray:
        k = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + k * np.uint64(GOLDEN)
            out = _mix64_array(states)
        self.state = (self.state + n * GOLDEN) & MASK64
        return out

    def uniform(self) -> float:
        """One double in [0, 1)."""
        return (self.next_u64() >> 11) * _INV_2_53

    def random(self, n: int) -> np.ndarray:
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def integers(self, high: int, n: int) -> np.ndarray:
        """``n`` integers uniform on ``[0, high)``."""
        if high <= 0:
            raise ValueError("high must be positive")
        out = np.floor(self.random(n) * high).astype(np.int64)
        return np.minimum(out, high - 1)

    def randint(self, high: int) -> int:
        return min(int(self.uniform() * high), high - 1)

    def normal(self) -> float:
        # Box-Muller; 1 - u keeps the log argument in (0, 1].
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def gamma(self, shape: float) -> float:
        """Marsaglia-Tsang sampler, boosted for shape < 1."""
        if shape <= 0:
            raise ValueError("gamma shape must be positive")
        if shape < 1.0:
            boost = (1.0 - self.uniform()) ** (1.0 / shape)
            return self.gamma(shape + 1.0) * boost
        d = shape - 1.0 / 3.0
        c = 1.0 / math.sqrt(9.0 * d)
        while True:
            x = self.normal()
            v = 1.0 + c * x
            if v <= 0.0:
                continue
            v = v * v * v
            u = 1.0 - self.uniform()
            if math.log(u) < 0.5 * x * x + d - d * v + d * math.log(v):
                return d * v

    def beta(self, a: float, b: float) -> float:
        x = self.gamma(a)
        y = self.gamma(b)
        if x + y == 0.0:
            return 0.5
        return x / (x + y)

    def sample_without_replacement(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)`` via partial Fisher-Yates."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot draw {k} of {n} without replacement")
        idx = np.arange(n, dtype=np.int64)
        u = self.random(k)
        for i in range(k):
            j = i + min(int(u[i] * (n - i)), n - i - 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k].copy()

    def permutation(self, n: int) -> np.ndarray:
        return self.sample_without_replacement(n, n)
