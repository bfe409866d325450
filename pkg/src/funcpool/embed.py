"""Per-residue embedding matrices: the SLEB binary container and a synthetic embedder.

SLEB layout (little-endian)::

    b"SLEB" 0x01 | u32 dim | u64 count |
    count x ( u16 id_len | id utf-8 | u32 n_residues | n_residues*dim f32 row-major )

There is no trailing index; readers rebuild it with one sequential pass.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataError, FormatError, NotFoundError
from .rng import Rng, combine, mix64
from .seqio import AMINO_ACIDS, WILDCARD, ProteinSequence

MAGIC = b"SLEB"
VERSION = 1
_HEADER = struct.Struct("<4sBIQ")
_ID_LEN = struct.Struct("<H")
_N_RES = struct.Struct("<I")

_SYNTH_ALPHABET = AMINO_ACIDS + WILDCARD
CONTEXT = 8


@dataclass
class EmbeddingMatrix:
    protein_id: str
    rows: np.ndarray  # (n_residues, dim)

    def __post_init__(self):
        self.rows = np.asarray(self.rows)
        if self.rows.ndim != 2 or self.rows.shape[0] == 0 or self.rows.shape[1] == 0:
            raise DataError(f"{self.protein_id}: embedding must be a non-empty 2-D matrix")

    @property
    def n_residues(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


class EmbeddingStore:
    """Read-only view of a SLEB file, indexed by protein id."""

    def __init__(self, dim: int, index: dict[str, tuple[int, int]], buffer: bytes, path: Path | None = None):
        self.dim = dim
        self.index = index  # protein_id -> (byte offset of payload, n_residues)
        self._buffer = buffer
        self.path = path

    @classmethod
    def from_matrices(cls, matrices: Sequence[EmbeddingMatrix], dim: int | None = None) -> EmbeddingStore:
        """In-memory store; values pass through the same float32 encoding as a file."""
        return decode_store(encode_store(list(matrices), dim))

    def __len__(self) -> int:
        return len(self.index)

    def __contains__(self, protein_id: str) -> bool:
        return protein_id in self.index

    def ids(self) -> list[str]:
        return list(self.index)

    def lookup(self, protein_id: str) -> EmbeddingMatrix:
        try:
            offset, n = self.index[protein_id]
        except KeyError:
            raise NotFoundError(f"no embedding for protein {protein_id!r}") from None
        rows = np.frombuffer(self._buffer, dtype="<f4", count=n * self.dim, offset=offset)
        return EmbeddingMatrix(protein_id, rows.reshape(n, self.dim).copy())

    def __iter__(self) -> Iterator[EmbeddingMatrix]:
        for pid in self.index:
            yield self.lookup(pid)


def encode_store(matrices: Sequence[EmbeddingMatrix], dim: int | None = None) -> bytes:
    ids = [m.protein_id for m in matrices]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise DataError(f"duplicate protein ids: {', '.join(dupes)}")
    dims = {m.dim for m in matrices}
    if len(dims) > 1:
        raise DataError(f"embedding dims differ: {sorted(dims)}")
    if dims:
        dim = dims.pop()
    elif dim is None:
        dim = 0
    parts = [_HEADER.pack(MAGIC, VERSION, dim, len(matrices))]
    for m in matrices:
        if not np.isfinite(m.rows).all():
            raise DataError(f"{m.protein_id}: non-finite embedding values")
        raw_id = m.protein_id.encode("utf-8")
        if len(raw_id) > 0xFFFF:
            raise DataError(f"protein id too long: {m.protein_id[:40]}...")
        parts.append(_ID_LEN.pack(len(raw_id)))
        parts.append(raw_id)
        parts.append(_N_RES.pack(m.n_residues))
        parts.append(np.ascontiguousarray(m.rows, dtype="<f4").tobytes())
    return b"".join(parts)


def write_store(matrices: Sequence[EmbeddingMatrix], path: str | Path, dim: int | None = None) -> None:
    """Write a SLEB container. All validation happens before the file is opened."""
    data = encode_store(list(matrices), dim)
    Path(path).write_bytes(data)


def decode_store(buffer: bytes, path: Path | None = None) -> EmbeddingStore:
    if len(buffer) < _HEADER.size:
        raise FormatError("file too short for a SLEB header")
    magic, version, dim, count = _HEADER.unpack_from(buffer, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}; not a SLEB container")
    if version != VERSION:
        raise FormatError(f"unsupported SLEB version {version}")
    pos = _HEADER.size
    index: dict[str, tuple[int, int]] = {}
    for _ in range(count):
        if pos + _ID_LEN.size > len(buffer):
            raise FormatError("truncated record header")
        (id_len,) = _ID_LEN.unpack_from(buffer, pos)
        pos += _ID_LEN.size
        if pos + id_len + _N_RES.size > len(buffer):
            raise FormatError("truncated record header")
        pid = buffer[pos : pos + id_len].decode("utf-8")
        pos += id_len
        (n,) = _N_RES.unpack_from(buffer, pos)
        pos += _N_RES.size
        nbytes = n * dim * 4
        if pos + nbytes > len(buffer):
            raise FormatError(f"truncated payload for {pid!r}")
        if pid in index:
            raise FormatError(f"duplicate protein id {pid!r}")
        index[pid] = (pos, n)
        pos += nbytes
    if pos != len(buffer):
        raise FormatError(f"{len(buffer) - pos} trailing bytes after last record")
    return EmbeddingStore(dim, index, buffer, path)


def read_store(path: str | Path) -> EmbeddingStore:
    path = Path(path)
    return decode_store(path.read_bytes(), path)


# -- synthetic embeddings ----------------------------------------------------


def _base_row(seed: int, code: int, context: int, dim: int) -> np.ndarray:
    # Irwin-Hall(4) centred and scaled to unit variance.
    u = Rng(combine(seed, code, context)).random(4 * dim).reshape(dim, 4)
    return (u.sum(axis=1) - 2.0) * math.sqrt(3.0)


def signal_coordinate(seed: int, dim: int) -> int:
    """Second coordinate that carries the planted functional signal."""
    return 1 + mix64(seed) % (dim - 1)


def synth_embed(
    seq: ProteinSequence,
    dim: int,
    seed: int,
    functional_positions: Iterable[int] = (),
    signal: float = 0.0,
) -> EmbeddingMatrix:
    """Deterministic stand-in for a protein language model.

    Row i depends only on (seed, residue at i, i mod 8); functional rows get
    ``signal`` added to coordinate 0 and to :func:`signal_coordinate`.
    """
    if dim < 2:
        raise DataError("synthetic embeddings need dim >= 2")
    cache: dict[tuple[int, int], np.ndarray] = {}
    rows = np.empty((len(seq), dim), dtype=np.float64)
    for i, aa in enumerate(seq.residues):
        key = (_SYNTH_ALPHABET.index(aa), i % CONTEXT)
        base = cache.get(key)
        if base is None:
            base = cache[key] = _base_row(seed, key[0], key[1], dim)
        rows[i] = base
    if signal:
        c = signal_coordinate(seed, dim)
        for i in sorted(set(functional_positions)):
            if 0 <= i < len(seq):
                rows[i, 0] += signal
                rows[i, c] += signal
    return EmbeddingMatrix(seq.id, rows.astype(np.float32))
