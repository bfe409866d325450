import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from funcpool.errors import AlignmentError, DataError, ParseError
from funcpool.rng import Rng
from funcpool.seqio import (
    AMINO_ACIDS,
    ProteinSequence,
    TagSpec,
    apply_tag,
    builtin_tag,
    format_fasta,
    parse_aligned_fasta,
    parse_fasta,
    simulate_ortholog,
    tag_offset,
)


def hamming(a: str, b: str) -> int:
    return sum(x != y for x, y in zip(a, b))


class TestParseFasta:
    def test_single_record(self):
        assert parse_fasta(">p1\nACDE\n") == [ProteinSequence("p1", "ACDE")]

    def test_multiline_records(self):
        seqs = parse_fasta(">p1\nAC\nDE\n>p2\nGG\n")
        assert [s.residues for s in seqs] == ["ACDE", "GG"]

    def test_illegal_character_reports_line(self):
        with pytest.raises(ParseError) as exc:
            parse_fasta(">p1\nAC1E\n")
        assert exc.value.line == 2

    def test_ambiguity_codes_become_wildcard(self):
        assert parse_fasta(">p\nABZUOJ\n")[0].residues == "AXXXXX"

    def test_lowercase_bytes_and_gaps(self):
        assert parse_fasta(b">p desc\nac-de\n")[0] == ProteinSequence("p", "ACDE")

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ParseError):
            parse_fasta(">p\nA\n>p\nC\n")

    def test_sequence_before_header(self):
        with pytest.raises(ParseError):
            parse_fasta("ACDE\n")

    def test_empty_record(self):
        with pytest.raises(ParseError):
            parse_fasta(">p\n>q\nA\n")

    @settings(max_examples=50)
    @given(st.lists(st.text(alphabet=AMINO_ACIDS + "X", min_size=1, max_size=150), min_size=1, max_size=5))
    def test_round_trip(self, residues):
        seqs = [ProteinSequence(f"s{i}", r) for i, r in enumerate(residues)]
        assert parse_fasta(format_fasta(seqs)) == seqs


class TestParseAligned:
    def test_two_rows(self):
        fam = parse_aligned_fasta(">a\nAC-E\n>b\nAC-E\n")
        assert fam.length == 4 and len(fam.rows) == 2

    def test_insertions_stripped_then_length_mismatch(self):
        with pytest.raises(AlignmentError) as exc:
            parse_aligned_fasta(">a\nACxE\n>b\nAC-E\n")
        assert exc.value.offending == ["b"]

    def test_single_row_family(self):
        fam = parse_aligned_fasta(">a\nAAAA\n")
        assert fam.rows == ("AAAA",) and fam.query_id == "a"

    def test_dots_are_gaps(self):
        fam = parse_aligned_fasta(">a\nA.C\n>b\nAAC\n")
        assert fam.query == "A-C" and fam.query_columns() == [0, 2]

    def test_all_gap_query_rejected(self):
        with pytest.raises(AlignmentError):
            parse_aligned_fasta(">a\n---\n>b\nAAC\n")


class TestTags:
    def test_his6_n_terminal(self):
        out = apply_tag(ProteinSequence("p", "ACDE"), builtin_tag("his6", "N"))
        assert out.residues == "HHHHHHACDE" and out.id == "p|tag:his6"

    def test_hsv_c_terminal(self):
        out = apply_tag(ProteinSequence("p", "ACDE"), builtin_tag("hsv", "C"))
        assert out.residues == "ACDEQPELAPEDPED"

    def test_empty_name_allowed(self):
        out = apply_tag(ProteinSequence("p", "ACDE"), TagSpec("", "GG", "N"))
        assert out.id == "p|tag:"

    def test_offsets(self):
        assert tag_offset(builtin_tag("his6", "N")) == 6
        assert tag_offset(builtin_tag("his6", "C")) == 0

    def test_unknown_tag(self):
        with pytest.raises(DataError):
            builtin_tag("halo")

    @given(st.text(alphabet=AMINO_ACIDS, min_size=1, max_size=60), st.sampled_from(["N", "C"]))
    def test_original_preserved(self, residues, terminus):
        tag = TagSpec("t", "GSGS", terminus)
        out = apply_tag(ProteinSequence("p", residues), tag).residues
        k = tag_offset(tag)
        assert out[k : k + len(residues)] == residues


class TestOrtholog:
    def test_identity_one_is_unchanged(self):
        s = ProteinSequence("p", "ACDEFGHIKL")
        assert simulate_ortholog(s, 1.0, Rng(0)).residues == s.residues

    def test_exact_substitution_count(self):
        s = ProteinSequence("p", "ACDEFGHIKL")
        assert hamming(simulate_ortholog(s, 0.8, Rng(0)).residues, s.residues) == 2

    def test_all_protected_is_infeasible(self):
        with pytest.raises(DataError):
            simulate_ortholog(ProteinSequence("p", "ACDEFGHIKL"), 0.8, Rng(0), protected=range(10))

    @settings(max_examples=60)
    @given(
        st.text(alphabet=AMINO_ACIDS, min_size=5, max_size=80),
        st.floats(0.5, 1.0),
        st.integers(0, 2**32),
    )
    def test_hamming_and_protection(self, residues, q, seed):
        s = ProteinSequence("p", residues)
        protected = set(range(0, len(residues), 3))
        m = round((1 - q) * len(residues))
        if m > len(residues) - len(protected):
            with pytest.raises(DataError):
                simulate_ortholog(s, q, Rng(seed), protected)
            return
        out = simulate_ortholog(s, q, Rng(seed), protected).residues
        assert hamming(out, residues) == m
        assert all(out[i] == residues[i] for i in protected)
