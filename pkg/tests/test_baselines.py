"""BLEU, tokenization, sentence splitting, and averaged cosine."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capeval.baselines import (
    avg_segment_cosine,
    bleu,
    sentence_spans,
    sentence_split,
    tokenize,
)
from capeval.errors import DimensionMismatchError, ValidationError


class TestTokenize:
    def test_basic(self):
        assert tokenize("A cat.") == ["a", "cat"]

    def test_empty(self):
        assert tokenize("") == []

    def test_internal_punctuation_kept(self):
        assert tokenize("state-of-the-art!") == ["state-of-the-art"]

    def test_pure_punctuation_dropped(self):
        assert tokenize("... !!") == []

    def test_unicode_whitespace(self):
        assert tokenize("a b\tc") == ["a", "b", "c"]


class TestBleu:
    def test_identical_candidate(self):
        c = tokenize("a long caption about a dog in a park")
        assert bleu(c, [c]) == 1.0

    def test_disjoint_candidate(self):
        assert bleu(["x", "y", "z"], [["a", "b", "c"]]) == 0.0

    def test_hand_fixture_clipped_bigram(self):
        # the/the/cat vs the/cat/sat: p1 = 2/3 (clip "the" to 1), p2 = 1/2.
        c = ["the", "the", "cat"]
        r = ["the", "cat", "sat"]
        expected = math.sqrt((2 / 3) * (1 / 2))  # lengths equal, bp = 1
        assert bleu(c, [r], max_order=2) == pytest.approx(expected, abs=1e-12)

    def test_hand_fixture_brevity_penalty(self):
        # Perfect 4-gram prefix of a longer reference: bp = e^(1 - 5/4).
        c = ["a", "b", "c", "d"]
        r = ["a", "b", "c", "d", "e"]
        assert bleu(c, [r]) == pytest.approx(math.exp(-0.25), abs=1e-12)

    def test_hand_fixture_partial_overlap(self):
        # p1 = 2/4, p2 = 1/3, equal lengths.
        c = ["x", "a", "b", "y"]
        r = ["a", "b", "c", "d"]
        assert bleu(c, [r], max_order=2) == pytest.approx(
            math.sqrt(1 / 6), abs=1e-12
        )

    def test_zero_higher_order_zeroes_score(self):
        # Effective orders reach 3 here and the trigram precision is 0.
        assert bleu(["the", "the", "cat"], [["the", "cat", "sat"]]) == 0.0

    def test_short_candidate_skips_impossible_orders(self):
        assert bleu(["cat"], [["cat"]]) == 1.0

    def test_brevity_tie_prefers_shorter_reference(self):
        c = ["a", "b", "c", "d"]
        refs = [["a", "b", "c", "d", "e"], ["a", "b", "c"]]
        # Closest length to 4 is a tie (5 vs 3); shorter wins, so bp = 1.
        assert bleu(c, refs) == 1.0

    def test_longer_candidate_no_penalty(self):
        c = ["a", "b", "c", "d", "e"]
        r = ["a", "b", "c", "d"]
        p1, p2, p3 = 4 / 5, 3 / 4, 2 / 3
        p4 = 1 / 2
        expected = (p1 * p2 * p3 * p4) ** 0.25
        assert bleu(c, [r]) == pytest.approx(expected, abs=1e-12)

    def test_clipping_across_multiple_references(self):
        c = ["the", "the"]
        refs = [["the"], ["the", "the"]]
        assert bleu(c, refs, max_order=1) == 1.0

    def test_empty_candidate_rejected(self):
        with pytest.raises(ValidationError):
            bleu([], [["a"]])

    def test_no_references_rejected(self):
        with pytest.raises(ValidationError):
            bleu(["a"], [])

    @given(
        st.lists(st.sampled_from("abcdefg"), min_size=1, max_size=12),
        st.lists(
            st.lists(st.sampled_from("abcdefg"), min_size=1, max_size=12),
            min_size=0,
            max_size=3,
        ),
    )
    @settings(max_examples=80, deadline=None)
    def test_candidate_among_references_scores_one(self, cand, other_refs):
        assert bleu(cand, other_refs + [list(cand)]) == 1.0

    @given(
        st.lists(st.sampled_from("abcd"), min_size=1, max_size=10),
        st.lists(st.sampled_from("abcd"), min_size=1, max_size=10),
    )
    @settings(max_examples=80, deadline=None)
    def test_range(self, cand, ref):
        assert 0.0 <= bleu(cand, [ref]) <= 1.0


class TestSentenceSplit:
    def test_two_sentences(self):
        assert sentence_split("A cat. A dog.") == ["A cat.", "A dog."]

    def test_no_terminator_fallback(self):
        assert sentence_split("No terminator here") == ["No terminator here"]

    def test_naive_rule_splits_after_abbreviation(self):
        # The rule is intentionally naive: '.' before whitespace+uppercase
        # splits, so the honorific produces its own segment.
        assert sentence_split("Mr. Smith sat. He left.") == [
            "Mr.",
            "Smith sat.",
            "He left.",
        ]

    def test_lowercase_continuation_not_split(self):
        assert sentence_split("It was approx. five meters long.") == [
            "It was approx. five meters long."
        ]

    def test_question_and_exclamation(self):
        assert sentence_split("Really?! Yes. Go!") == ["Really?!", "Yes.", "Go!"]

    def test_spans_concatenate_to_original(self):
        text = "One sentence here. Another one!  And a third? done."
        assert "".join(sentence_spans(text)) == text

    @given(st.text(min_size=1, max_size=120))
    @settings(max_examples=150, deadline=None)
    def test_spans_cover_any_text(self, text):
        spans = sentence_spans(text)
        assert "".join(spans) == text
        assert all(spans)

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            sentence_split("")


class TestAvgSegmentCosine:
    def test_identical_vector(self):
        v = np.array([1.0, 2.0, 3.0])
        assert avg_segment_cosine(v, [v]) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert avg_segment_cosine([1.0, 0.0], [[0.0, 1.0]]) == pytest.approx(
            0.0, abs=1e-12
        )

    def test_mixed_mean(self):
        img = [1.0, 0.0]
        assert avg_segment_cosine(img, [[2.0, 0.0], [0.0, 3.0]]) == pytest.approx(
            0.5, abs=1e-12
        )

    def test_positive_rescale_invariance(self):
        rng = np.random.default_rng(21)
        img = rng.standard_normal(6)
        sents = [rng.standard_normal(6) for _ in range(4)]
        base = avg_segment_cosine(img, sents)
        scaled = avg_segment_cosine(2.5 * img, [7.0 * s for s in sents])
        assert scaled == pytest.approx(base, abs=1e-12)

    def test_zero_norm_rejected(self):
        with pytest.raises(ValidationError):
            avg_segment_cosine([0.0, 0.0], [[1.0, 0.0]])
        with pytest.raises(ValidationError):
            avg_segment_cosine([1.0, 0.0], [[0.0, 0.0]])

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            avg_segment_cosine([1.0, 0.0], [[1.0, 0.0, 0.0]])

    def test_empty_sentences_rejected(self):
        with pytest.raises(ValidationError):
            avg_segment_cosine([1.0, 0.0], [])
