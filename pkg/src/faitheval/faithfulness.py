"""The three faithfulness metrics: attribution similarity and the
perturbation-based explanation sufficiency / comprehensiveness scores.

Attribution similarity compares answer-side and explanation-side relevance
vectors per modality with cosine, normalizes each to [0, 1] via
``0.5 * (1 + cos)``, and averages the present modalities.

Sufficiency and comprehensiveness remove (or keep only) the top-k% features
ranked by explanation relevance and measure the drop in the predicted class
probability, averaged over a set of k fractions (area over the perturbation
curve).  Removal masks words with the PAD token and zeroes visual regions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .core import (
    AttributionPair,
    AttributionVector,
    MetricRow,
    Modality,
    PAD_TOKEN_ID,
    TaskExample,
    cosine,
    has_zero_norm,
)
from .errors import FaithevalError, InvalidInput, OracleError

DEFAULT_BINS = (0.01, 0.05, 0.10, 0.20, 0.50)
RANKING_MODES = ("signed", "abs")


@dataclass(frozen=True)
class FeatureBin:
    """The top-k% feature subset selected from an explanation attribution."""

    modality: Modality
    fraction: float
    feature_ids: tuple[int, ...]
    ranking_mode: str = "signed"

    def __post_init__(self):
        object.__setattr__(self, "modality", Modality(self.modality))
        if not 0.0 < self.fraction <= 1.0:
            raise InvalidInput(f"fraction must lie in (0, 1], got {self.fraction}")
        if self.ranking_mode not in RANKING_MODES:
            raise InvalidInput(f"unknown ranking mode {self.ranking_mode!r}")
        object.__setattr__(self, "feature_ids", tuple(int(i) for i in self.feature_ids))


@dataclass(frozen=True)
class SFScore:
    """Per-modality cosines, normalized scores, and their mean.

    ``zero_norm_language`` / ``zero_norm_vision`` flag modalities where a
    zero-norm attribution vector forced the neutral cosine of 0.
    """

    cos_nlp: float | None
    cos_img: float | None
    sf_nlp: float | None
    sf_img: float | None
    overall: float | None
    zero_norm_language: bool = False
    zero_norm_vision: bool = False


def normalized_similarity(cos_value: float) -> float:
    return 0.5 * (1.0 + cos_value)


def attribution_similarity(
    pair_nlp: AttributionPair | None, pair_img: AttributionPair | None = None
) -> SFScore:
    """Cosine per modality, normalized to [0, 1], averaged over present modalities."""
    if pair_nlp is None and pair_img is None:
        return SFScore(None, None, None, None, None)
    cos_nlp = sf_nlp = cos_img = sf_img = None
    zero_nlp = zero_img = False
    if pair_nlp is not None:
        if pair_nlp.answer.modality is not Modality.LANGUAGE:
            raise InvalidInput("pair_nlp must hold language vectors")
        zero_nlp = has_zero_norm(pair_nlp.answer.values) or has_zero_norm(
            pair_nlp.explanation.values
        )
        cos_nlp = cosine(pair_nlp.answer.values, pair_nlp.explanation.values)
        sf_nlp = normalized_similarity(cos_nlp)
    if pair_img is not None:
        if pair_img.answer.modality is not Modality.VISION:
            raise InvalidInput("pair_img must hold vision vectors")
        zero_img = has_zero_norm(pair_img.answer.values) or has_zero_norm(
            pair_img.explanation.values
        )
        cos_img = cosine(pair_img.answer.values, pair_img.explanation.values)
        sf_img = normalized_similarity(cos_img)
    present = [s for s in (sf_nlp, sf_img) if s is not None]
    overall = sum(present) / len(present)
    return SFScore(cos_nlp, cos_img, sf_nlp, sf_img, overall, zero_nlp, zero_img)


def select_top_k(
    explanation_attrib: AttributionVector, k: float, mode: str = "signed"
) -> FeatureBin:
    """Deterministic top-ceil(k*N) selection; ties broken toward lower ids."""
    if not 0.0 < k <= 1.0:
        raise InvalidInput(f"k must lie in (0, 1], got {k}")
    if mode not in RANKING_MODES:
        raise InvalidInput(f"unknown ranking mode {mode!r}")
    n = len(explanation_attrib)
    if n == 0:
        raise InvalidInput("cannot select from an empty attribution vector")
    count = min(math.ceil(k * n), n)
    key = (
        (lambda fid_v: (-fid_v[1], fid_v[0]))
        if mode == "signed"
        else (lambda fid_v: (-abs(fid_v[1]), fid_v[0]))
    )
    ranked = sorted(
        zip(explanation_attrib.feature_ids, explanation_attrib.values.tolist()), key=key
    )
    selected = tuple(fid for fid, _ in ranked[:count])
    return FeatureBin(explanation_attrib.modality, k, selected, mode)


def _language_ids_ok(example: TaskExample, ids: Iterable[int]):
    for fid in ids:
        if not 0 <= fid < len(example.words):
            raise InvalidInput(f"word index {fid} out of range for example {example.id!r}")


def _vision_ids_ok(example: TaskExample, ids: Iterable[int]):
    for fid in ids:
        if not 0 <= fid < example.n_regions:
            raise InvalidInput(f"region index {fid} out of range for example {example.id!r}")


def _as_bins(bins: FeatureBin | Sequence[FeatureBin]) -> list[FeatureBin]:
    if isinstance(bins, FeatureBin):
        return [bins]
    out = list(bins)
    if len({b.modality for b in out}) != len(out):
        raise InvalidInput("at most one bin per modality")
    return out


def _mask_words(example: TaskExample, word_ids: Iterable[int], pad_token_id: int) -> TaskExample:
    word_ids = set(word_ids)
    tokens = tuple(
        replace(t, id=pad_token_id, text="[PAD]") if t.word_index in word_ids else t
        for t in example.tokens
    )
    return replace(example, tokens=tokens)


def _mask_regions(example: TaskExample, region_ids: Iterable[int]) -> TaskExample:
    if example.visual_features is None:
        return example
    vf = example.visual_features.copy()
    for rid in region_ids:
        vf[rid, :] = 0.0
    return replace(example, visual_features=vf)


def perturb_remove(
    example: TaskExample,
    bins: FeatureBin | Sequence[FeatureBin],
    pad_token_id: int = PAD_TOKEN_ID,
) -> TaskExample:
    """A new example with the selected features masked out.

    Selected words are replaced by PAD at every constituent token; selected
    vision regions are zeroed.  The original example is never mutated.
    """
    out = example
    for bin_ in _as_bins(bins):
        if bin_.modality is Modality.LANGUAGE:
            _language_ids_ok(example, bin_.feature_ids)
            out = _mask_words(out, bin_.feature_ids, pad_token_id)
        else:
            _vision_ids_ok(example, bin_.feature_ids)
            out = _mask_regions(out, bin_.feature_ids)
    return out


def perturb_keep_only(
    example: TaskExample,
    bins: FeatureBin | Sequence[FeatureBin],
    pad_token_id: int = PAD_TOKEN_ID,
) -> TaskExample:
    """Complement of :func:`perturb_remove` within each bin's modality."""
    out = example
    for bin_ in _as_bins(bins):
        if bin_.modality is Modality.LANGUAGE:
            _language_ids_ok(example, bin_.feature_ids)
            keep = set(bin_.feature_ids)
            out = _mask_words(out, (i for i in range(len(example.words)) if i not in keep), pad_token_id)
        else:
            _vision_ids_ok(example, bin_.feature_ids)
            keep = set(bin_.feature_ids)
            out = _mask_regions(out, (i for i in range(example.n_regions) if i not in keep))
    return out


def _predicted_prob(oracle, example: TaskExample, j: int) -> float:
    try:
        dist = oracle.predict(oracle.codec.materialize(example))
    except FaithevalError:
        raise
    except Exception as exc:  # pragma: no cover - defensive wrap of user oracles
        raise OracleError(f"oracle predict failed: {exc}") from exc
    if not 0 <= j < dist.probs.shape[0]:
        raise InvalidInput(f"class {j} out of range for {dist.probs.shape[0]} classes")
    return dist[j]


def _aopc(
    oracle,
    example: TaskExample,
    expl_attrib: AttributionVector,
    bins: Sequence[float],
    j: int,
    perturb,
    ranking_mode: str,
    pad_token_id: int,
) -> float:
    if not bins:
        raise InvalidInput("need at least one bin fraction")
    p_full = _predicted_prob(oracle, example, j)
    total = 0.0
    for k in bins:
        bin_ = select_top_k(expl_attrib, k, ranking_mode)
        perturbed = perturb(example, bin_, pad_token_id)
        total += p_full - _predicted_prob(oracle, perturbed, j)
    return total / len(bins)


def nle_comprehensiveness(
    oracle,
    example: TaskExample,
    expl_attrib: AttributionVector,
    bins: Sequence[float] = DEFAULT_BINS,
    j: int | None = None,
    ranking_mode: str = "signed",
    pad_token_id: int = PAD_TOKEN_ID,
) -> float:
    """Mean drop in p_j when the explanation-relevant features are removed.

    High values indicate the explanation relied on the features that actually
    carried the prediction.
    """
    if j is None:
        j = oracle.predict(oracle.codec.materialize(example)).argmax
    return _aopc(
        oracle, example, expl_attrib, bins, j, perturb_remove, ranking_mode, pad_token_id
    )


def nle_sufficiency(
    oracle,
    example: TaskExample,
    expl_attrib: AttributionVector,
    bins: Sequence[float] = DEFAULT_BINS,
    j: int | None = None,
    ranking_mode: str = "signed",
    pad_token_id: int = PAD_TOKEN_ID,
) -> float:
    """Mean drop in p_j when only the explanation-relevant features are kept.

    Low values indicate the explanation-relevant features alone support the
    prediction.
    """
    if j is None:
        j = oracle.predict(oracle.codec.materialize(example)).argmax
    return _aopc(
        oracle, example, expl_attrib, bins, j, perturb_keep_only, ranking_mode, pad_token_id
    )


def metric_row(
    example_id: str,
    sf: SFScore,
    suff_nlp: float | None = None,
    comp_nlp: float | None = None,
    suff_img: float | None = None,
    comp_img: float | None = None,
) -> MetricRow:
    return MetricRow.from_scores(
        example_id, sf.sf_nlp, sf.sf_img, suff_nlp, comp_nlp, suff_img, comp_img
    )
