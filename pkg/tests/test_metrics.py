import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskseq.metrics import (
    LossKind,
    MetricError,
    build_info_table,
    corpus_bleu,
    corpus_nist,
    corpus_ter,
    delta,
    sentence_bleu_smoothed,
    sentence_nist,
    sentence_ter,
)
from riskseq.model import BOS, EOS, PAD

words = st.lists(st.sampled_from("a b c d e".split()), min_size=1, max_size=8)


class TestLossKind:
    def test_parse_by_value(self):
        assert LossKind.parse("neg_sbleu") is LossKind.NEG_SMOOTHED_BLEU
        assert LossKind.parse("ster") is LossKind.SMOOTHED_TER
        assert LossKind.parse("neg_snist") is LossKind.NEG_SMOOTHED_NIST

    def test_parse_by_name(self):
        assert LossKind.parse("smoothed_ter") is LossKind.SMOOTHED_TER

    def test_parse_unknown(self):
        with pytest.raises(MetricError):
            LossKind.parse("bleu5")


class TestSentenceBleu:
    def test_identity_scores_one(self):
        ref = "the cat sat on the mat".split()
        assert sentence_bleu_smoothed(ref, ref) == pytest.approx(1.0)

    def test_hand_counted_example(self):
        # Precisions counted by hand: 5/6 unigrams, then add-one smoothed
        # (3+1)/(5+1), (2+1)/(4+1), (1+1)/(3+1); equal lengths so no brevity
        # penalty.
        hyp = "the cat sat on the mat".split()
        ref = "the cat sat on a mat".split()
        expected = (5 / 6 * 4 / 6 * 3 / 5 * 2 / 4) ** 0.25
        assert sentence_bleu_smoothed(hyp, ref) == pytest.approx(expected, abs=1e-12)

    def test_disjoint_hypothesis_scores_zero(self):
        assert sentence_bleu_smoothed("x y z".split(), "a b c".split()) == 0.0

    def test_empty_hypothesis_scores_zero(self):
        assert sentence_bleu_smoothed([], "a b".split()) == 0.0

    def test_empty_reference_rejected(self):
        with pytest.raises(MetricError):
            sentence_bleu_smoothed("a".split(), [])

    def test_brevity_penalty_applied(self):
        # hyp = one correct word, ref length 4: BP = exp(1 - 4/1)
        hyp, ref = ["a"], "a b c d".split()
        got = sentence_bleu_smoothed(hyp, ref)
        no_bp = (1.0 * (1 / 1) * (1 / 1) * (1 / 1)) ** 0.25
        assert got == pytest.approx(math.exp(1 - 4) * no_bp, abs=1e-12)

    def test_reserved_ids_stripped(self):
        assert sentence_bleu_smoothed(
            [4, 5, 6, EOS, PAD], [BOS, 4, 5, 6, EOS]
        ) == pytest.approx(1.0)

    @given(hyp=words, ref=words)
    @settings(max_examples=60, deadline=None)
    def test_bounded_zero_one(self, hyp, ref):
        assert 0.0 <= sentence_bleu_smoothed(hyp, ref) <= 1.0


class TestSentenceTer:
    def test_swap_is_one_shift(self):
        assert sentence_ter("b a".split(), "a b".split()) == 0.5

    def test_identity_is_zero(self):
        assert sentence_ter("a b c".split(), "a b c".split()) == 0.0

    def test_all_substitutions(self):
        assert sentence_ter("x y".split(), "a b".split()) == 1.0

    def test_insertion_and_deletion(self):
        assert sentence_ter("a".split(), "a b".split()) == 0.5
        assert sentence_ter("a b c".split(), "a b".split()) == 0.5

    def test_shift_beats_two_substitutions(self):
        # moving "c d" in one shift: hyp "c d a b" -> ref "a b c d"
        assert sentence_ter("c d a b".split(), "a b c d".split()) == 0.25

    def test_can_exceed_one(self):
        assert sentence_ter("x y z w".split(), ["a"]) == 4.0

    def test_empty_reference_rejected(self):
        with pytest.raises(MetricError):
            sentence_ter(["a"], [])

    @given(hyp=words, ref=words)
    @settings(max_examples=40, deadline=None)
    def test_never_negative_and_zero_iff_equal(self, hyp, ref):
        t = sentence_ter(hyp, ref)
        assert t >= 0.0
        if hyp == ref:
            assert t == 0.0

    @given(hyp=words, ref=words)
    @settings(max_examples=40, deadline=None)
    def test_never_worse_than_plain_edit_distance(self, hyp, ref):
        from riskseq.metrics import _levenshtein

        assert sentence_ter(hyp, ref) <= _levenshtein(tuple(hyp), tuple(ref)) / len(ref)


class TestNist:
    def test_info_weights_hand_counted(self):
        info = build_info_table(["a b a".split()])
        assert info[("a",)] == pytest.approx(math.log2(3 / 2))
        assert info[("b",)] == pytest.approx(math.log2(3 / 1))
        # bigram weight = log2(count(prefix "a") / count("a b")) = log2(2/1)
        assert info[("a", "b")] == pytest.approx(1.0)
        assert info[("a", "b", "a")] == pytest.approx(0.0)

    def test_empty_corpus_rejected(self):
        with pytest.raises(MetricError):
            build_info_table([])

    def test_identity_hypothesis_hand_value(self):
        ref = "a b a".split()
        info = build_info_table([ref])
        # n=1: (2*log2(1.5) + log2(3)) / 3
        # n=2: ("a b" weighs log2(2/1)=1, "b a" weighs log2(1/1)=0) / 2
        # n=3, n=4: zero information
        expected = (2 * math.log2(1.5) + math.log2(3)) / 3 + 0.5
        assert sentence_nist(ref, ref, info) == pytest.approx(expected)

    def test_brevity_factor_is_half_at_two_thirds_ratio(self):
        ref = "a b a a b a".split()
        info = build_info_table([ref])
        full = sentence_nist(ref, ref, info)
        partial = sentence_nist(ref[:4], ref, info)
        # the hypothesis "a b a a" keeps unigram/bigram averages equal to the
        # full sentence only for unigrams; just check the factor directly
        from riskseq.metrics import _nist_brevity

        assert _nist_brevity(4, 6) == pytest.approx(0.5)
        assert partial < full

    def test_empty_hypothesis_scores_zero(self):
        info = build_info_table(["a b".split()])
        assert sentence_nist([], "a b".split(), info) == 0.0

    def test_unknown_ngrams_contribute_nothing(self):
        info = build_info_table(["a b".split()])
        assert sentence_nist("c d".split(), "c d".split(), info) == 0.0


class TestDelta:
    def test_bleu_loss_is_negated(self):
        ref = "a b c d".split()
        assert delta(LossKind.NEG_SMOOTHED_BLEU, ref, ref) == pytest.approx(-1.0)

    def test_ter_loss_passthrough(self):
        assert delta(LossKind.SMOOTHED_TER, "b a".split(), "a b".split()) == 0.5

    def test_nist_requires_info_table(self):
        with pytest.raises(MetricError):
            delta(LossKind.NEG_SMOOTHED_NIST, ["a"], ["a"])

    def test_nist_loss_is_negated(self):
        info = build_info_table(["a b a".split()])
        ref = "a b a".split()
        assert delta(LossKind.NEG_SMOOTHED_NIST, ref, ref, info) == pytest.approx(
            -sentence_nist(ref, ref, info)
        )


class TestCorpusBleu:
    def test_perfect_corpus_scores_100(self):
        refs = [["a b c d e".split()], ["b c d e a".split()]]
        hyps = [r[0] for r in refs]
        assert corpus_bleu(hyps, refs) == pytest.approx(100.0)

    def test_any_zero_ngram_bucket_scores_zero(self):
        # 4-gram matches are zero, and multi-bleu does not smooth
        assert corpus_bleu(["a b x d".split()], [["a b c d".split()]]) == 0.0

    def test_multi_reference_clipping_uses_max_per_reference(self):
        refs = [["a a b".split(), "a c c".split()]]
        one_ref = corpus_bleu(["a a a a".split()], [["a a b".split()]])
        two_ref = corpus_bleu(["a a a a".split()], refs)
        assert two_ref == one_ref  # the extra reference adds no "a" mass

    def test_closest_reference_length_breaks_ties_short(self):
        # hyp length 5; reference lengths 7 and 3 are both 2 away. The tie
        # must resolve to the shorter one, making the effective reference
        # length 3 < 5 and the brevity penalty exactly 1, so the score is a
        # perfect 100 (all hyp n-grams appear in the longer reference).
        hyps = ["a b c d e".split()]
        refs = [["a b c d e f g".split(), "a b c".split()]]
        assert corpus_bleu(hyps, refs) == pytest.approx(100.0)

    def test_count_mismatch_rejected(self):
        with pytest.raises(MetricError):
            corpus_bleu([["a"]], [])


class TestCorpusTerNist:
    def test_corpus_ter_perfect_is_zero(self):
        refs = [["a b".split()]]
        assert corpus_ter(["a b".split()], refs) == 0.0

    def test_corpus_ter_pools_edits_over_ref_length(self):
        hyps = ["b a".split(), "x".split()]
        refs = [["a b".split()], [["y"]]]
        # 1 shift + 1 substitution over 3 reference words
        assert corpus_ter(hyps, refs) == pytest.approx(100.0 * 2 / 3)

    def test_corpus_ter_takes_best_reference(self):
        hyps = ["a b".split()]
        refs = [["x y z".split(), "a b".split()]]
        assert corpus_ter(hyps, refs) == 0.0

    def test_corpus_nist_identity_positive(self):
        refs = [["a b a".split()], ["b a b".split()]]
        info = build_info_table([r[0] for r in refs])
        hyps = [r[0] for r in refs]
        assert corpus_nist(hyps, refs, info) > 0.0

    def test_corpus_nist_empty_hyps_zero(self):
        refs = [["a b".split()]]
        info = build_info_table([refs[0][0]])
        assert corpus_nist([[]], refs, info) == 0.0
