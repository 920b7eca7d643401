import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from faitheval import (
    AttributionPair,
    AttributionVector,
    InvalidInput,
    MetricRow,
    Modality,
    PredictionDistribution,
    TaskExample,
    Token,
    cosine,
    softmax_normalize,
)

finite_floats = st.floats(min_value=-50, max_value=50, allow_nan=False)


class TestSoftmax:
    def test_symmetric_pair(self):
        assert softmax_normalize([0.0, 0.0]).probs.tolist() == [0.5, 0.5]

    def test_single_logit(self):
        assert softmax_normalize([3.7]).probs.tolist() == [1.0]

    def test_known_values(self):
        # oracle: 50-digit decimal arithmetic, independent of numpy's exp
        from decimal import Decimal, getcontext

        getcontext().prec = 50
        exps = [Decimal(x).exp() for x in (1, 2, 3)]
        total = sum(exps)
        expected = [float(e / total) for e in exps]
        probs = softmax_normalize([1.0, 2.0, 3.0]).probs
        np.testing.assert_allclose(probs, expected, atol=1e-12)
        np.testing.assert_allclose(probs, [0.09003, 0.24473, 0.66524], atol=5e-6)

    def test_empty_rejected(self):
        with pytest.raises(InvalidInput):
            softmax_normalize([])

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInput):
            softmax_normalize([1.0, math.inf])

    @given(st.lists(finite_floats, min_size=1, max_size=10), st.floats(-20, 20))
    def test_shift_invariance(self, logits, shift):
        base = softmax_normalize(logits).probs
        shifted = softmax_normalize([x + shift for x in logits]).probs
        assert np.max(np.abs(base - shifted)) <= 1e-9

    @given(st.lists(finite_floats, min_size=1, max_size=10))
    def test_argmax_preserved(self, logits):
        # sub-ulp logit gaps vanish inside exp, so only claim the property
        # when the winner is separated by more than float noise
        top_two = sorted(logits, reverse=True)[:2]
        assume(len(logits) == 1 or top_two[0] - top_two[1] > 1e-9)
        assert softmax_normalize(logits).argmax == int(np.argmax(logits))

    @given(st.lists(finite_floats, min_size=1, max_size=10))
    def test_sums_to_one(self, logits):
        assert abs(float(softmax_normalize(logits).probs.sum()) - 1.0) <= 1e-9


class TestCosine:
    def test_identity(self):
        v = np.array([0.3, -1.2, 4.0])
        assert cosine(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_antipodal(self):
        v = np.array([0.3, -1.2, 4.0])
        assert cosine(v, -v) == pytest.approx(-1.0, abs=1e-12)

    def test_hand_value(self):
        assert cosine([1, 0], [1, 1]) == pytest.approx(1 / math.sqrt(2), abs=1e-9)

    def test_zero_norm_is_neutral(self):
        assert cosine([0.0, 0.0], [1.0, 2.0]) == 0.0
        assert cosine([1.0, 2.0], [0.0, 0.0]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(InvalidInput):
            cosine([1.0], [1.0, 2.0])

    def test_scale_invariance_seeded(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            n = int(rng.integers(2, 32))
            a, b = rng.normal(0, 1, (2, n))
            c = float(rng.uniform(1e-9, 10))
            assert abs(cosine(a, c * b) - cosine(a, b)) <= 1e-9


class TestPredictionDistribution:
    def test_valid(self):
        dist = PredictionDistribution([0.25, 0.75])
        assert dist.argmax == 1
        assert dist[0] == 0.25

    def test_sum_enforced(self):
        with pytest.raises(InvalidInput):
            PredictionDistribution([0.5, 0.6])

    def test_range_enforced(self):
        with pytest.raises(InvalidInput):
            PredictionDistribution([-0.2, 1.2])


class TestAttributionVector:
    def test_duplicate_ids_rejected(self):
        with pytest.raises(InvalidInput):
            AttributionVector(Modality.LANGUAGE, (0, 0), [1.0, 2.0])

    def test_nan_rejected(self):
        with pytest.raises(InvalidInput):
            AttributionVector(Modality.VISION, (0,), [math.nan])

    def test_pair_requires_same_features(self):
        a = AttributionVector(Modality.LANGUAGE, (0, 1), [1.0, 2.0])
        b = AttributionVector(Modality.LANGUAGE, (1, 0), [1.0, 2.0])
        with pytest.raises(InvalidInput):
            AttributionPair(a, b)

    def test_pair_requires_same_modality(self):
        a = AttributionVector(Modality.LANGUAGE, (0,), [1.0])
        b = AttributionVector(Modality.VISION, (0,), [1.0])
        with pytest.raises(InvalidInput):
            AttributionPair(a, b)

    def test_values_frozen(self):
        vec = AttributionVector(Modality.LANGUAGE, (0, 1), [1.0, 2.0])
        with pytest.raises(ValueError):
            vec.values[0] = 9.0


class TestMetricRow:
    def test_overall_is_mean_of_modalities(self):
        row = MetricRow.from_scores("x", sf_nlp=0.6, sf_img=0.4)
        assert row.sf_overall == (0.6 + 0.4) / 2

    @given(
        st.floats(0, 1, allow_nan=False).map(float),
        st.floats(0, 1, allow_nan=False).map(float),
    )
    def test_overall_mean_property(self, a, b):
        row = MetricRow.from_scores("x", sf_nlp=a, sf_img=b)
        assert row.sf_overall == (a + b) / 2

    def test_overall_absent_without_vision(self):
        row = MetricRow.from_scores("x", sf_nlp=0.6, sf_img=None)
        assert row.sf_overall is None

    def test_inconsistent_overall_rejected(self):
        with pytest.raises(InvalidInput):
            MetricRow("x", sf_nlp=0.6, sf_img=0.4, sf_overall=0.9)

    def test_overall_without_modalities_rejected(self):
        with pytest.raises(InvalidInput):
            MetricRow("x", sf_nlp=0.6, sf_overall=0.6)


class TestTaskExample:
    def test_token_word_cover_enforced(self):
        with pytest.raises(InvalidInput):
            TaskExample(
                id="bad",
                words=("a", "b"),
                tokens=(Token(1, "a", 0),),
                visual_features=None,
                answer_class=0,
            )

    def test_word_indices_must_be_ordered(self):
        with pytest.raises(InvalidInput):
            TaskExample(
                id="bad",
                words=("a", "b"),
                tokens=(Token(1, "b", 1), Token(2, "a", 0)),
                visual_features=None,
                answer_class=0,
            )

    def test_visual_features_frozen(self):
        ex = TaskExample(
            id="ok",
            words=("a",),
            tokens=(Token(1, "a", 0),),
            visual_features=np.ones((2, 3)),
            answer_class=0,
        )
        with pytest.raises(ValueError):
            ex.visual_features[0, 0] = 5.0

    def test_word_token_indices(self):
        ex = TaskExample(
            id="ok",
            words=("ab", "c"),
            tokens=(Token(1, "a", 0), Token(2, "b", 0), Token(3, "c", 1)),
            visual_features=None,
            answer_class=0,
        )
        assert ex.word_token_indices() == ((0, 1), (2,))
