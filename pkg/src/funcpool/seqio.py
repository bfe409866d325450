"""Protein sequence and alignment I/O, plus function-preserving augmentations."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import AlignmentError, DataError, ParseError
from .rng import Rng

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
WILDCARD = "X"
GAP = "-"
RESIDUE_ALPHABET = frozenset(AMINO_ACIDS + WILDCARD)
ALIGNED_ALPHABET = frozenset(AMINO_ACIDS + WILDCARD + GAP)
AMBIGUOUS = {"B": "X", "Z": "X", "U": "X", "O": "X", "J": "X"}


@dataclass(frozen=True)
class ProteinSequence:
    id: str
    residues: str

    def __post_init__(self):
        if not self.id:
            raise DataError("protein id must be non-empty")
        if not self.residues:
            raise DataError(f"{self.id}: empty sequence")
        bad = set(self.residues) - RESIDUE_ALPHABET
        if bad:
            raise DataError(f"{self.id}: invalid residues {''.join(sorted(bad))}")

    def __len__(self) -> int:
        return len(self.residues)


@dataclass(frozen=True)
class AlignedFamily:
    ids: tuple[str, ...]
    rows: tuple[str, ...]
    query_index: int = 0

    def __post_init__(self):
        if not self.rows:
            raise AlignmentError("alignment has no rows")
        if len(self.ids) != len(self.rows):
            raise AlignmentError("ids and rows differ in count")
        width = len(self.rows[0])
        bad = [i for i, r in zip(self.ids, self.rows) if len(r) != width]
        if bad:
            raise AlignmentError("rows differ in aligned length", bad)
        for rid, row in zip(self.ids, self.rows):
            extra = set(row) - ALIGNED_ALPHABET
            if extra:
                raise AlignmentError(f"invalid symbols {''.join(sorted(extra))}", [rid])
        if not 0 <= self.query_index < len(self.rows):
            raise AlignmentError("query index out of range")
        if set(self.query) <= {GAP}:
            raise AlignmentError("query row is all gaps", [self.query_id])

    @property
    def query(self) -> str:
        return self.rows[self.query_index]

    @property
    def query_id(self) -> str:
        return self.ids[self.query_index]

    @property
    def length(self) -> int:
        return len(self.rows[0])

    def query_columns(self) -> list[int]:
        """Alignment columns occupied by query residues, in sequence order."""
        return [j for j, ch in enumerate(self.query) if ch != GAP]


@dataclass(frozen=True)
class TagSpec:
    name: str
    residues: str
    terminus: str = "N"

    def __post_init__(self):
        if not self.residues:
            raise DataError(f"tag {self.name!r} has no residues")
        bad = set(self.residues) - RESIDUE_ALPHABET
        if bad:
            raise DataError(f"tag {self.name!r}: invalid residues {''.join(sorted(bad))}")
        if self.terminus not in ("N", "C"):
            raise DataError(f"tag terminus must be N or C, got {self.terminus!r}")


BUILTIN_TAGS = {
    "his6": "HHHHHH",
    "hsv": "QPELAPEDPED",
}


def builtin_tag(name: str, terminus: str = "N") -> TagSpec:
    try:
        residues = BUILTIN_TAGS[name.lower()]
    except KeyError:
        raise DataError(f"unknown tag {name!r}; known: {', '.join(sorted(BUILTIN_TAGS))}") from None
    return TagSpec(name=name.lower(), residues=residues, terminus=terminus)


def _records(text: str) -> list[tuple[str, list[tuple[int, str]], int]]:
    """Split FASTA text into (header, [(line_no, seq_line)], header_line_no)."""
    records: list[tuple[str, list[tuple[int, str]], int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith(">"):
            records.append((line[1:], [], lineno))
        elif not records:
            raise ParseError("sequence data before first '>' header", lineno)
        else:
            records[-1][1].append((lineno, line))
    if not records:
        raise ParseError("empty FASTA input")
    return records


def _decode(data: str | bytes) -> str:
    if isinstance(data, bytes):
        return data.decode("utf-8")
    return data


def _header_id(header: str, lineno: int) -> str:
    parts = header.split()
    if not parts:
        raise ParseError("record has an empty header", lineno)
    return parts[0]


def parse_fasta(data: str | bytes) -> list[ProteinSequence]:
    """Parse protein FASTA; ambiguity codes B/Z/U/O/J become X, gap symbols are dropped."""
    out: list[ProteinSequence] = []
    seen: set[str] = set()
    for header, lines, hline in _records(_decode(data)):
        pid = _header_id(header, hline)
        if pid in seen:
            raise ParseError(f"duplicate id {pid!r}", hline)
        seen.add(pid)
        chunks = []
        for lineno, line in lines:
            seq = line.upper().replace(GAP, "").replace(".", "")
            for ch in seq:
                if ch not in RESIDUE_ALPHABET and ch not in AMBIGUOUS:
                    raise ParseError(f"illegal character {ch!r} in {pid}", lineno)
            chunks.append("".join(AMBIGUOUS.get(ch, ch) for ch in seq))
        residues = "".join(chunks)
        if not residues:
            raise ParseError(f"record {pid!r} has an empty sequence", hline)
        out.append(ProteinSequence(pid, residues))
    return out


def parse_aligned_fasta(data: str | bytes) -> AlignedFamily:
    """Parse A2M-style aligned FASTA. The first record is the query.

    Lowercase letters are insertions relative to the query and are dropped;
    '.' is read as a gap.
    """
    ids: list[str] = []
    rows: list[str] = []
    for header, lines, hline in _records(_decode(data)):
        rid = _header_id(header, hline)
        chunks = []
        for lineno, line in lines:
            kept = []
            for ch in line:
                if ch.islower():
                    continue
                if ch == ".":
                    ch = GAP
                ch = AMBIGUOUS.get(ch, ch)
                if ch not in ALIGNED_ALPHABET:
                    raise ParseError(f"illegal character {ch!r} in {rid}", lineno)
                kept.append(ch)
            chunks.append("".join(kept))
        ids.append(rid)
        rows.append("".join(chunks))
    width = len(rows[0])
    bad = [rid for rid, row in zip(ids, rows) if len(row) != width]
    if bad:
        raise AlignmentError(f"aligned length differs from query ({width})", bad)
    return AlignedFamily(tuple(ids), tuple(rows), 0)


def format_fasta(seqs: Iterable[ProteinSequence], width: int = 60) -> str:
    lines = []
    for s in seqs:
        lines.append(f">{s.id}")
        for i in range(0, len(s.residues), width):
            lines.append(s.residues[i : i + width])
    return "\n".join(lines) + "\n"


def format_aligned_fasta(family: AlignedFamily) -> str:
    return "".join(f">{i}\n{r}\n" for i, r in zip(family.ids, family.rows))


def read_fasta(path: str | Path) -> list[ProteinSequence]:
    return parse_fasta(Path(path).read_bytes())


def write_fasta(seqs: Iterable[ProteinSequence], path: str | Path) -> None:
    Path(path).write_text(format_fasta(seqs), encoding="utf-8")


def read_aligned_fasta(path: str | Path) -> AlignedFamily:
    return parse_aligned_fasta(Path(path).read_bytes())


def apply_tag(seq: ProteinSequence, tag: TagSpec) -> ProteinSequence:
    if tag.terminus == "N":
        residues = tag.residues + seq.residues
    else:
        residues = seq.residues + tag.residues
    return ProteinSequence(f"{seq.id}|tag:{tag.name}", residues)


def tag_offset(tag: TagSpec) -> int:
    """Shift applied to original residue indices by ``apply_tag``."""
    return len(tag.residues) if tag.terminus == "N" else 0


def simulate_ortholog(
    seq: ProteinSequence,
    identity: float,
    rng: Rng,
    protected: Sequence[int] | frozenset[int] = (),
) -> ProteinSequence:
    """Substitute exactly ``round((1 - identity) * n)`` unprotected positions.

    Each chosen position receives a uniformly drawn amino acid different from
    the original one.
    """
    if not 0.0 < identity <= 1.0:
        raise DataError(f"identity must be in (0, 1], got {identity}")
    n = len(seq)
    guarded = {i for i in protected if 0 <= i < n}
    m = round((1.0 - identity) * n)
    free = [i for i in range(n) if i not in guarded]
    if m > len(free):
        raise DataError(
            f"{seq.id}: {m} substitutions requested but only {len(free)} unprotected positions"
        )
    chosen = sorted(free[j] for j in rng.sample_without_replacement(len(free), m))
    residues = list(seq.residues)
    for i in chosen:
        options = [a for a in AMINO_ACIDS if a != residues[i]]
        residues[i] = options[rng.randint(len(options))]
    suffix = f"|ortholog:{identity:g}"
    return ProteinSequence(seq.id + suffix, "".join(residues))
