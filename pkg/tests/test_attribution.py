import numpy as np
import pytest

from faitheval import (
    EmptyExplanation,
    IGConfig,
    InvalidInput,
    attribute_answer,
    attribute_explanation,
    default_baseline,
    integrated_gradients,
    make_toy_model,
)
from faitheval.attribution import build_baseline, completeness_residual
from faitheval.oracle import AnswerTarget, ExplanationTarget, GradientRecord
from faitheval.selftest import RandomMlp, _LinearOracle, _as_row
from tests.conftest import build_example, load_fixture


class NegatedOracle:
    """Serves -f: gradients and scalar outputs flip sign."""

    def __init__(self, inner):
        self.inner = inner

    def gradient(self, inputs, target):
        g = self.inner.gradient(inputs, target)
        return GradientRecord(
            text=None if g.text is None else -g.text,
            vision=None if g.vision is None else -g.vision,
        )

    def target_value(self, inputs, target):
        return -self.inner.target_value(inputs, target)


class TestIntegratedGradients:
    def test_input_equal_baseline_gives_exact_zero(self):
        mlp = RandomMlp(0)
        x = _as_row(mlp.probe_input)
        ig = integrated_gradients(mlp, x, x, AnswerTarget(0), IGConfig(steps=5, baseline="all_zero"))
        np.testing.assert_array_equal(ig["visual_features"], np.zeros_like(x.visual_features))

    @pytest.mark.parametrize("m", [1, 10, 100])
    def test_linear_closed_form(self, m):
        oracle = _LinearOracle(np.array([2.0, -1.0, 0.5]))
        ig = integrated_gradients(
            oracle,
            _as_row([1.0, 2.0, 3.0]),
            _as_row([0.0, 0.0, 0.0]),
            AnswerTarget(0),
            IGConfig(steps=m, baseline="all_zero"),
        )
        np.testing.assert_allclose(ig["visual_features"][0], [2.0, -2.0, 1.5], atol=1e-12)

    def test_completeness_improves_with_steps(self):
        mlp = RandomMlp(5)
        inputs = _as_row(mlp.probe_input)
        baseline = _as_row(np.zeros(mlp.n_in))
        target = AnswerTarget(0)
        residuals = []
        for m in (10, 50, 300):
            ig = integrated_gradients(
                mlp, inputs, baseline, target, IGConfig(steps=m, baseline="all_zero")
            )
            resid, scale = completeness_residual(mlp, inputs, baseline, target, ig)
            residuals.append(resid)
        assert residuals[0] >= residuals[1] >= residuals[2]
        assert residuals[2] <= 1e-3 * scale

    def test_shape_mismatch_rejected(self):
        mlp = RandomMlp(0)
        with pytest.raises(InvalidInput):
            integrated_gradients(
                mlp,
                _as_row(np.zeros(10)),
                _as_row(np.zeros(4)),
                AnswerTarget(0),
                IGConfig(steps=2, baseline="all_zero"),
            )

    def test_sign_preservation(self):
        mlp = RandomMlp(3)
        inputs = _as_row(mlp.probe_input)
        baseline = _as_row(np.zeros(mlp.n_in))
        cfg = IGConfig(steps=20, baseline="all_zero")
        plain = integrated_gradients(mlp, inputs, baseline, AnswerTarget(1), cfg)
        negated = integrated_gradients(NegatedOracle(mlp), inputs, baseline, AnswerTarget(1), cfg)
        np.testing.assert_allclose(
            negated["visual_features"], -plain["visual_features"], atol=0
        )

    def test_steps_must_be_positive(self):
        with pytest.raises(InvalidInput):
            IGConfig(steps=0)

    def test_matches_independent_left_riemann_loop(self):
        # reimplemented from the formula with an explicit loop: the grid is
        # alpha = k/m for k = 0..m-1 (baseline included, endpoint excluded),
        # which only a nonlinear oracle can distinguish
        mlp = RandomMlp(11)
        x = mlp.probe_input
        baseline = np.zeros_like(x)
        m = 7
        target = AnswerTarget(2)
        accumulated = np.zeros_like(x)
        for k in range(m):
            point = baseline + (k / m) * (x - baseline)
            accumulated += mlp.gradient(_as_row(point), target).vision[0]
        expected = (x - baseline) * accumulated / m
        got = integrated_gradients(
            mlp, _as_row(x), _as_row(baseline), target, IGConfig(steps=m, baseline="all_zero")
        )
        np.testing.assert_allclose(got["visual_features"][0], expected, atol=1e-12)

    def test_oracle_failure_wrapped(self):
        class Broken:
            def gradient(self, inputs, target):
                raise RuntimeError("cable unplugged")

        from faitheval import OracleError

        with pytest.raises(OracleError, match="cable unplugged"):
            integrated_gradients(
                Broken(),
                _as_row([1.0, 2.0]),
                _as_row([0.0, 0.0]),
                AnswerTarget(0),
                IGConfig(steps=2, baseline="all_zero"),
            )


class TestBaselines:
    def test_default_baseline_idempotent(self, toy_model, example):
        codec = toy_model.codec
        inputs = codec.materialize(example)
        base = default_baseline(inputs, codec)
        again = default_baseline(base, codec)
        np.testing.assert_array_equal(base.text_embeddings, again.text_embeddings)
        np.testing.assert_array_equal(base.visual_features, again.visual_features)

    def test_zero_vision_baseline(self, toy_model, example):
        base = default_baseline(toy_model.materialize(example), toy_model.codec)
        assert float(np.linalg.norm(base.visual_features)) == 0.0

    def test_pad_rows_match_embedding_table(self, toy_model, example):
        codec = toy_model.codec
        base = default_baseline(codec.materialize(example), codec)
        pad_row = codec.embedding_table[codec.pad_token_id]
        for row in base.text_embeddings:
            np.testing.assert_array_equal(row, pad_row)

    def test_all_zero_policy(self, toy_model, example):
        inputs = toy_model.materialize(example)
        base = build_baseline(inputs, toy_model.codec, IGConfig(baseline="all_zero"))
        assert float(np.abs(base.text_embeddings).sum()) == 0.0

    def test_unknown_policy_rejected(self):
        with pytest.raises(InvalidInput):
            IGConfig(baseline="white-noise")


class TestAttributeAnswer:
    def test_word_level_language_and_region_vision(self, toy_model, example):
        attr = attribute_answer(toy_model, example, IGConfig(steps=10))
        assert attr.language.feature_ids == tuple(range(len(example.words)))
        assert attr.vision.feature_ids == tuple(range(example.n_regions))

    def test_vision_free_example(self, toy_model):
        attr = attribute_answer(toy_model, build_example(n_regions=0), IGConfig(steps=10))
        assert attr.vision is None
        assert attr.language is not None

    def test_repeat_call_bitwise_identical(self, toy_model, example):
        a = attribute_answer(toy_model, example, IGConfig(steps=10), target_class=1)
        b = attribute_answer(toy_model, example, IGConfig(steps=10), target_class=1)
        np.testing.assert_array_equal(a.language.values, b.language.values)
        np.testing.assert_array_equal(a.vision.values, b.vision.values)

    def test_golden_fixture(self, toy_model, example):
        golden = load_fixture("golden_answer_attribution.json")
        attr = attribute_answer(toy_model, example, IGConfig(steps=50), target_class=2)
        np.testing.assert_allclose(
            attr.language.values, golden["language"]["values"], rtol=0, atol=0
        )
        np.testing.assert_allclose(attr.vision.values, golden["vision"]["values"], rtol=0, atol=0)

    def test_golden_fixture_satisfies_completeness(self, toy_model, example):
        cfg = IGConfig(steps=300)
        inputs = toy_model.materialize(example)
        baseline = default_baseline(inputs, toy_model.codec)
        ig = integrated_gradients(toy_model, inputs, baseline, AnswerTarget(2), cfg)
        resid, scale = completeness_residual(toy_model, inputs, baseline, AnswerTarget(2), ig)
        assert resid <= 1e-3 * scale

    def test_word_aggregation_spans_multi_token_words(self, toy_model):
        ex = build_example(
            token_ids=(3, 4, 5, 6),
            word_indices=(0, 0, 1, 2),
            words=("whatsup", "sport", "?"),
        )
        attr = attribute_answer(toy_model, ex, IGConfig(steps=10))
        assert len(attr.language) == 3

    def test_per_feature_vision_mode(self, toy_model, example):
        attr = attribute_answer(
            toy_model, example, IGConfig(steps=10, vision_granularity="feature")
        )
        assert len(attr.vision) == example.n_regions * toy_model.dims.d_vis


class TestAttributeExplanation:
    def test_empty_generation_rejected(self, toy_model, example):
        with pytest.raises(EmptyExplanation):
            attribute_explanation(toy_model, example, ())

    def test_single_token_equals_single_step(self, toy_model, example):
        cfg = IGConfig(steps=10)
        whole = attribute_explanation(toy_model, example, (9,), cfg, target_class=1)
        inputs = toy_model.materialize(example, answer_class=1, explanation_tokens=(9,))
        baseline = default_baseline(inputs, toy_model.codec)
        ig = integrated_gradients(toy_model, inputs, baseline, ExplanationTarget(0, 9), cfg)
        np.testing.assert_array_equal(whole.language.values[:], _words(ig, example))
        np.testing.assert_array_equal(whole.vision.values, ig["visual_features"].sum(axis=1))

    def test_equals_sum_of_independent_steps(self, toy_model, example):
        cfg = IGConfig(steps=10)
        generated = (7, 9, 2)
        whole = attribute_explanation(toy_model, example, generated, cfg, target_class=1)
        inputs = toy_model.materialize(example, answer_class=1, explanation_tokens=generated)
        baseline = default_baseline(inputs, toy_model.codec)
        lang_total = np.zeros(len(example.words))
        vis_total = np.zeros(example.n_regions)
        for step, token in enumerate(generated):
            ig = integrated_gradients(
                toy_model, inputs, baseline, ExplanationTarget(step, token), cfg
            )
            lang_total = lang_total + _words(ig, example)
            vis_total = vis_total + ig["visual_features"].sum(axis=1)
        np.testing.assert_allclose(whole.language.values, lang_total, atol=1e-9)
        np.testing.assert_allclose(whole.vision.values, vis_total, atol=1e-9)

    def test_no_task_features_drops_vision(self, example):
        model = make_toy_model(42, ablation="NU")
        attr = attribute_explanation(model, example, (7, 9), IGConfig(steps=5), target_class=1)
        assert attr.vision is None
        assert attr.language is not None

    def test_answer_only_drops_everything(self, example):
        model = make_toy_model(42, ablation="OA")
        attr = attribute_explanation(model, example, (7,), IGConfig(steps=5), target_class=1)
        assert attr.language is None and attr.vision is None

    def test_prefix_content_never_receives_relevance(self, toy_model, example):
        # attribution flows to the original inputs only; what was generated
        # in earlier passes is context, not an attribution target
        from faitheval.oracle import ExplanationTarget as Target

        for tokens in ((9, 5, 13), (1, 2, 13)):
            inputs = toy_model.materialize(example, answer_class=1, explanation_tokens=tokens)
            grad = toy_model.gradient(inputs, Target(2, 13))
            if tokens == (9, 5, 13):
                first = grad
        np.testing.assert_array_equal(first.text, grad.text)
        np.testing.assert_array_equal(first.vision, grad.vision)

    def test_default_target_is_predicted_class(self, toy_model, example):
        j = toy_model.predict(toy_model.materialize(example)).argmax
        implicit = attribute_answer(toy_model, example, IGConfig(steps=6))
        explicit = attribute_answer(toy_model, example, IGConfig(steps=6), target_class=j)
        np.testing.assert_array_equal(implicit.language.values, explicit.language.values)


def _words(ig, example):
    token_scores = ig["text_embeddings"].sum(axis=1)
    out = np.zeros(len(example.words))
    for index, group in enumerate(example.word_token_indices()):
        for token_index in group:
            out[index] += token_scores[token_index]
    return out
