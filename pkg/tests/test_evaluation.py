"""Tests for exact-match span scoring and model prediction."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from partialner.corpus import EntitySpan, decode_bio
from partialner.evaluation import EvalResult, evaluate_model, predict, span_f1
from partialner.tagger import TaggerConfig, TaggerModel, forward


def prf(matches, predicted, gold):
    p = matches / predicted if predicted else 0.0
    r = matches / gold if gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


class TestSpanF1:
    def test_hand_case(self):
        gold = [[EntitySpan(0, 1, "PER"), EntitySpan(3, 4, "LOC")]]
        pred = [[EntitySpan(0, 1, "PER"), EntitySpan(2, 4, "LOC")]]
        res = span_f1(pred, gold)
        assert res.match_count == 1
        assert res.predicted_count == 2
        assert res.gold_count == 2
        assert res.precision == pytest.approx(0.5)
        assert res.recall == pytest.approx(0.5)
        assert res.f1 == pytest.approx(0.5)

    def test_category_must_match_too(self):
        gold = [[EntitySpan(0, 2, "PER")]]
        pred = [[EntitySpan(0, 2, "ORG")]]
        res = span_f1(pred, gold)
        assert res.match_count == 0
        assert res.f1 == 0.0

    def test_perfect_prediction(self):
        spans = [[EntitySpan(0, 2, "PER")], [], [EntitySpan(1, 3, "ORG")]]
        res = span_f1(spans, spans)
        assert res.precision == res.recall == res.f1 == 1.0
        assert res.match_count == res.gold_count == 2

    def test_empty_everything_scores_zero(self):
        res = span_f1([[], []], [[], []])
        assert res.precision == res.recall == res.f1 == 0.0
        assert res.gold_count == res.predicted_count == 0

    def test_zero_denominators(self):
        gold = [[EntitySpan(0, 1, "PER")]]
        assert span_f1([[]], gold).precision == 0.0
        assert span_f1([[]], gold).f1 == 0.0
        assert span_f1(gold, [[]]).recall == 0.0

    def test_same_offsets_different_sentences_do_not_match(self):
        gold = [[EntitySpan(0, 1, "PER")], []]
        pred = [[], [EntitySpan(0, 1, "PER")]]
        assert span_f1(pred, gold).match_count == 0

    def test_duplicate_spans_count_once(self):
        gold = [[EntitySpan(0, 1, "PER")]]
        pred = [[EntitySpan(0, 1, "PER"), EntitySpan(0, 1, "PER")]]
        res = span_f1(pred, gold)
        assert res.predicted_count == 1
        assert res.f1 == 1.0

    def test_per_category_breakdown(self):
        gold = [[EntitySpan(0, 1, "PER"), EntitySpan(2, 3, "LOC")],
                [EntitySpan(0, 2, "LOC")]]
        pred = [[EntitySpan(0, 1, "PER")],
                [EntitySpan(0, 2, "LOC"), EntitySpan(3, 4, "LOC")]]
        res = span_f1(pred, gold)
        assert res.per_category["PER"] == (1.0, 1.0, 1.0)
        assert res.category_counts["PER"] == (1, 1, 1)
        assert res.category_counts["LOC"] == (1, 2, 2)
        assert res.per_category["LOC"] == pytest.approx((0.5, 0.5, 0.5))
        assert list(res.per_category) == sorted(res.per_category)

    def test_category_counts_sum_to_micro(self):
        gold = [[EntitySpan(0, 1, "PER"), EntitySpan(2, 4, "ORG")],
                [EntitySpan(1, 2, "LOC")]]
        pred = [[EntitySpan(0, 1, "PER")], [EntitySpan(1, 3, "LOC")]]
        res = span_f1(pred, gold)
        sums = [sum(c[i] for c in res.category_counts.values()) for i in range(3)]
        assert sums == [res.match_count, res.predicted_count, res.gold_count]

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="sentences"):
            span_f1([[]], [[], []])

    def test_result_rejects_impossible_counts(self):
        with pytest.raises(ValueError, match="matches"):
            EvalResult(1.0, 1.0, 1.0, 1, 1, 2, {}, {})


spans_st = st.builds(
    lambda start, width, cat: EntitySpan(start, start + width, cat),
    st.integers(0, 15), st.integers(1, 4), st.sampled_from(["PER", "LOC", "ORG"]))
sentence_pairs_st = st.lists(
    st.tuples(st.frozensets(spans_st, max_size=5), st.frozensets(spans_st, max_size=5)),
    max_size=6)


class TestSpanF1Properties:
    @given(sentence_pairs_st)
    def test_matches_brute_force(self, pairs):
        pred = [p for p, _ in pairs]
        gold = [g for _, g in pairs]
        res = span_f1(pred, gold)
        matches = sum(len(p & g) for p, g in pairs)
        n_pred = sum(len(p) for p in pred)
        n_gold = sum(len(g) for g in gold)
        assert res.match_count == matches
        assert (res.predicted_count, res.gold_count) == (n_pred, n_gold)
        p, r, f = prf(matches, n_pred, n_gold)
        assert res.precision == pytest.approx(p)
        assert res.recall == pytest.approx(r)
        assert res.f1 == pytest.approx(f)

    @given(sentence_pairs_st)
    def test_identity_and_symmetry(self, pairs):
        pred = [p for p, _ in pairs]
        gold = [g for _, g in pairs]
        self_score = span_f1(gold, gold)
        if any(gold):
            assert self_score.f1 == 1.0
        swapped = span_f1(gold, pred)
        res = span_f1(pred, gold)
        assert swapped.precision == pytest.approx(res.recall)
        assert swapped.recall == pytest.approx(res.precision)
        assert swapped.f1 == pytest.approx(res.f1)
        assert swapped.match_count == res.match_count

    @given(sentence_pairs_st)
    def test_bounds(self, pairs):
        res = span_f1([p for p, _ in pairs], [g for _, g in pairs])
        for v in (res.precision, res.recall, res.f1):
            assert 0.0 <= v <= 1.0
        assert res.match_count <= min(res.predicted_count, res.gold_count)


def zeroed_model(scheme):
    cfg = TaggerConfig(embed_dim=4, window=1, hidden_dim=4, hash_buckets=64)
    model = TaggerModel.init(cfg, scheme)
    for arr in model.params().values():
        arr[:] = 0.0
    return model


class TestPredict:
    def test_uniform_distribution_decodes_to_o(self, scheme, make_sentence):
        model = zeroed_model(scheme)
        sents = [make_sentence("Anna met Bob"), make_sentence("Paris")]
        assert predict(model, sents) == [[], []]

    def test_matches_manual_argmax_decode(self, scheme, make_sentence):
        model = TaggerModel.init(
            TaggerConfig(embed_dim=4, window=1, hidden_dim=4, hash_buckets=64, seed=2),
            scheme)
        sents = [make_sentence("Anna met Bob in Paris"), make_sentence("Orion Labs opened")]
        got = predict(model, sents)
        want = [decode_bio(np.argmax(forward(model, s), axis=1).tolist(), scheme)
                for s in sents]
        assert got == want

    def test_evaluate_model_composes_predict_and_score(self, scheme, tiny_corpus):
        model = TaggerModel.init(
            TaggerConfig(embed_dim=4, window=1, hidden_dim=4, hash_buckets=64, seed=5),
            scheme)
        res = evaluate_model(model, tiny_corpus)
        manual = span_f1(predict(model, tiny_corpus.sentences), tiny_corpus.gold_spans())
        assert res == manual
        assert res.gold_count == tiny_corpus.total_entities()
