"""Integrated-gradients attribution over any gradient-capable oracle.

The attribution of feature ``i`` for a scalar output ``f`` is

    IG_i = (x_i - x'_i) * (1/m) * sum_{k=0..m-1} df(x' + (k/m)(x - x'))/dx_i

a left-Riemann approximation of the path integral of the gradient from the
baseline ``x'`` to the input ``x``.  As ``m`` grows the attributions sum to
``f(x) - f(x')`` (completeness); for linear oracles the result is exact for
any ``m >= 1``.

Explanation attributions for autoregressive generation are computed one
generated token at a time: attribution flows to the *original* inputs only
(relevance landing on previously generated tokens is discarded), and the
per-step vectors are summed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .alignment import WordMap, aggregate_to_words
from .core import AttributionVector, Modality, TaskExample
from .errors import EmptyExplanation, FaithevalError, InvalidInput, OracleError
from .oracle import AnswerTarget, ExplanationTarget, InputCodec, ModelInputs, Target

BASELINE_POLICIES = ("pad_text_zero_vision", "all_zero")
VISION_GRANULARITIES = ("region", "feature")


@dataclass(frozen=True)
class IGConfig:
    steps: int = 50
    baseline: str = "pad_text_zero_vision"
    vision_granularity: str = "region"

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidInput("integration steps must be >= 1")
        if self.baseline not in BASELINE_POLICIES:
            raise InvalidInput(f"unknown baseline policy {self.baseline!r}")
        if self.vision_granularity not in VISION_GRANULARITIES:
            raise InvalidInput(f"unknown vision granularity {self.vision_granularity!r}")

    def as_dict(self) -> dict:
        return {
            "m": self.steps,
            "baseline": self.baseline,
            "vision_granularity": self.vision_granularity,
        }


@dataclass(frozen=True)
class ModalAttribution:
    """Word-level language and per-region (or per-feature) vision attributions."""

    language: AttributionVector | None
    vision: AttributionVector | None

    def __post_init__(self):
        if self.language is not None and self.language.modality is not Modality.LANGUAGE:
            raise InvalidInput("language slot must hold a language vector")
        if self.vision is not None and self.vision.modality is not Modality.VISION:
            raise InvalidInput("vision slot must hold a vision vector")

    def add(self, other: "ModalAttribution") -> "ModalAttribution":
        return ModalAttribution(
            language=_add_vectors(self.language, other.language),
            vision=_add_vectors(self.vision, other.vision),
        )


def _add_vectors(a: AttributionVector | None, b: AttributionVector | None):
    if a is None or b is None:
        if (a is None) != (b is None):
            raise InvalidInput("cannot add attributions with mismatched modality presence")
        return None
    if a.feature_ids != b.feature_ids:
        raise InvalidInput("cannot add attributions over different feature sets")
    return AttributionVector(a.modality, a.feature_ids, a.values + b.values)


def default_baseline(inputs: ModelInputs, codec: InputCodec) -> ModelInputs:
    """PAD embedding at every text position, zero matrix for visual features."""
    return codec.baseline_for(inputs)


def build_baseline(inputs: ModelInputs, codec: InputCodec | None, config: IGConfig) -> ModelInputs:
    if config.baseline == "all_zero":
        return ModelInputs(
            text_embeddings=None
            if inputs.text_embeddings is None
            else np.zeros_like(inputs.text_embeddings),
            visual_features=None
            if inputs.visual_features is None
            else np.zeros_like(inputs.visual_features),
            answer_class=inputs.answer_class,
            explanation_tokens=inputs.explanation_tokens,
        )
    if codec is None:
        raise InvalidInput("PAD-text baseline requires an input codec (embedding table)")
    return default_baseline(inputs, codec)


def _oracle_gradients(oracle, points: list[ModelInputs], target: Target):
    try:
        if hasattr(oracle, "gradient_batch"):
            return oracle.gradient_batch(points, target)
        return [oracle.gradient(p, target) for p in points]
    except FaithevalError:
        raise
    except Exception as exc:  # pragma: no cover - defensive wrap of user oracles
        raise OracleError(f"oracle gradient call failed: {exc}") from exc


def integrated_gradients(
    oracle,
    inputs: ModelInputs,
    baseline: ModelInputs,
    target: Target,
    config: IGConfig = IGConfig(),
) -> dict[str, np.ndarray]:
    """Raw per-feature attributions, keyed by input array name."""
    arrays = inputs.arrays()
    base_arrays = baseline.arrays()
    if set(arrays) != set(base_arrays):
        raise InvalidInput("input and baseline must cover the same modalities")
    for name in arrays:
        if arrays[name].shape != base_arrays[name].shape:
            raise InvalidInput(
                f"{name}: input shape {arrays[name].shape} != baseline shape "
                f"{base_arrays[name].shape}"
            )
    m = config.steps
    points = []
    for k in range(m):
        alpha = k / m
        points.append(
            inputs.replace_arrays(
                {
                    name: base_arrays[name] + alpha * (arrays[name] - base_arrays[name])
                    for name in arrays
                }
            )
        )
    records = _oracle_gradients(oracle, points, target)

    out: dict[str, np.ndarray] = {}
    for name, attr in (("text_embeddings", "text"), ("visual_features", "vision")):
        if name not in arrays:
            continue
        grads = [getattr(r, attr) for r in records]
        if any(g is None for g in grads):
            raise OracleError(f"oracle returned no gradient for {name}")
        avg = np.mean(np.stack(grads), axis=0)
        out[name] = (arrays[name] - base_arrays[name]) * avg
    return out


def completeness_residual(
    oracle,
    inputs: ModelInputs,
    baseline: ModelInputs,
    target: Target,
    ig: dict[str, np.ndarray],
) -> tuple[float, float]:
    """(|sum IG - (f(x) - f(x'))|, |f(x) - f(x')|) via the oracle's scalar output."""
    delta = oracle.target_value(inputs, target) - oracle.target_value(baseline, target)
    total = float(sum(arr.sum() for arr in ig.values()))
    return abs(total - delta), abs(delta)


# ---------------------------------------------------------------------------
# Example-level attribution
# ---------------------------------------------------------------------------


def _language_vector(ig_text: np.ndarray, example: TaskExample) -> AttributionVector:
    token_scores = ig_text.sum(axis=1)
    token_vector = AttributionVector(
        Modality.LANGUAGE, tuple(range(len(token_scores))), token_scores
    )
    word_map = WordMap(example.word_token_indices())
    return aggregate_to_words(token_vector, word_map)


def _vision_vector(ig_vis: np.ndarray, granularity: str) -> AttributionVector:
    if granularity == "region":
        values = ig_vis.sum(axis=1)
    else:
        values = ig_vis.reshape(-1)
    return AttributionVector(Modality.VISION, tuple(range(len(values))), values)


def _reduce(ig: dict[str, np.ndarray], example: TaskExample, config: IGConfig) -> ModalAttribution:
    language = _language_vector(ig["text_embeddings"], example)
    vision = None
    if "visual_features" in ig:
        vision = _vision_vector(ig["visual_features"], config.vision_granularity)
    return ModalAttribution(language=language, vision=vision)


def _resolve_target_class(oracle, inputs: ModelInputs, target_class: int | None) -> int:
    if target_class is not None:
        return target_class
    return oracle.predict(inputs).argmax


def attribute_answer(
    oracle,
    example: TaskExample,
    config: IGConfig = IGConfig(),
    target_class: int | None = None,
) -> ModalAttribution:
    """IG of the predicted-class logit w.r.t. text (word-aggregated) and vision."""
    codec = oracle.codec
    inputs = codec.materialize(example)
    j = _resolve_target_class(oracle, inputs, target_class)
    baseline = build_baseline(inputs, codec, config)
    ig = integrated_gradients(oracle, inputs, baseline, AnswerTarget(j), config)
    return _reduce(ig, example, config)


def attribute_explanation(
    oracle,
    example: TaskExample,
    generated_tokens: Sequence[int],
    config: IGConfig = IGConfig(),
    target_class: int | None = None,
) -> ModalAttribution:
    """Per-generated-token IG against the original inputs, summed over tokens.

    Modalities that cannot reach the explanation head (per the oracle's
    declared explanation modalities) are reported as absent rather than as
    all-zero vectors.
    """
    generated = tuple(int(t) for t in generated_tokens)
    if not generated:
        raise EmptyExplanation(f"example {example.id!r}: no generated tokens to attribute")
    codec = oracle.codec
    info = oracle.info() if callable(getattr(oracle, "info", None)) else oracle.info
    modalities = set(info.explanation_modalities)
    if not modalities:
        return ModalAttribution(language=None, vision=None)

    inputs = codec.materialize(example, explanation_tokens=generated)
    j = _resolve_target_class(oracle, inputs, target_class)
    inputs = codec.materialize(example, answer_class=j, explanation_tokens=generated)
    baseline = build_baseline(inputs, codec, config)

    total: ModalAttribution | None = None
    for step, token_id in enumerate(generated):
        ig = integrated_gradients(
            oracle, inputs, baseline, ExplanationTarget(step, token_id), config
        )
        step_attr = _reduce(ig, example, config)
        total = step_attr if total is None else total.add(step_attr)
    assert total is not None
    return ModalAttribution(
        language=total.language if "language" in modalities else None,
        vision=total.vision if "vision" in modalities else None,
    )
