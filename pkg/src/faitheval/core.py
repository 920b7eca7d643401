"""Shared domain types and elementary numeric helpers.

Everything here is an immutable value: numpy arrays carried by the types are
frozen (``writeable = False``) at construction, and all functions are pure.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import InvalidInput

PAD_TOKEN_ID = 0

METRIC_COLUMNS = (
    "sf_nlp",
    "sf_img",
    "sf_overall",
    "suff_nlp",
    "comp_nlp",
    "suff_img",
    "comp_img",
)


class Modality(str, Enum):
    LANGUAGE = "language"
    VISION = "vision"


def _frozen_array(values, dtype=np.float64, ndim: int | None = None) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise InvalidInput(f"expected {ndim}-dimensional array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Token:
    """One text token: a vocabulary id, its surface form, and the word it belongs to."""

    id: int
    text: str
    word_index: int

    def __post_init__(self):
        if self.id < 0:
            raise InvalidInput(f"token id must be non-negative, got {self.id}")
        if self.word_index < 0:
            raise InvalidInput(f"word index must be non-negative, got {self.word_index}")


@dataclass(frozen=True)
class TaskExample:
    """One evaluation instance: text tokens, visual features, answer, explanation.

    ``visual_features`` is an ``[n_regions x d]`` matrix or ``None`` for
    examples without visual input.  ``explanation_tokens`` holds generated
    token ids when an explanation has already been produced.
    """

    id: str
    words: tuple[str, ...]
    tokens: tuple[Token, ...]
    visual_features: np.ndarray | None
    answer_class: int
    explanation_tokens: tuple[int, ...] | None = None

    def __post_init__(self):
        if not self.id:
            raise InvalidInput("example id must be non-empty")
        if not self.tokens:
            raise InvalidInput(f"example {self.id!r}: needs at least one token")
        if self.answer_class < 0:
            raise InvalidInput(f"example {self.id!r}: answer_class must be non-negative")
        covered = [t.word_index for t in self.tokens]
        if any(b < a for a, b in zip(covered, covered[1:])):
            raise InvalidInput(f"example {self.id!r}: token word indices must be non-decreasing")
        if set(covered) != set(range(len(self.words))):
            raise InvalidInput(
                f"example {self.id!r}: tokens must cover every word exactly "
                f"(words={len(self.words)}, covered={sorted(set(covered))})"
            )
        if self.visual_features is not None:
            vf = _frozen_array(self.visual_features, ndim=2)
            if vf.shape[0] == 0:
                vf = None
            elif not np.isfinite(vf).all():
                raise InvalidInput(f"example {self.id!r}: visual features must be finite")
            object.__setattr__(self, "visual_features", vf)
        if self.explanation_tokens is not None:
            object.__setattr__(self, "explanation_tokens", tuple(int(t) for t in self.explanation_tokens))

    @property
    def n_regions(self) -> int:
        return 0 if self.visual_features is None else self.visual_features.shape[0]

    @property
    def token_ids(self) -> tuple[int, ...]:
        return tuple(t.id for t in self.tokens)

    def word_token_indices(self) -> tuple[tuple[int, ...], ...]:
        """For each word, the indices of the tokens composing it."""
        groups: list[list[int]] = [[] for _ in self.words]
        for i, tok in enumerate(self.tokens):
            groups[tok.word_index].append(i)
        return tuple(tuple(g) for g in groups)


@dataclass(frozen=True)
class AttributionVector:
    """Signed relevance per feature within one modality.

    Feature ids are word indices for language and region (or flat feature)
    indices for vision.
    """

    modality: Modality
    feature_ids: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen_array(self.values, ndim=1)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "modality", Modality(self.modality))
        if len(self.feature_ids) != vals.shape[0]:
            raise InvalidInput(
                f"{len(self.feature_ids)} feature ids but {vals.shape[0]} values"
            )
        if len(set(self.feature_ids)) != len(self.feature_ids):
            raise InvalidInput("feature ids must be unique within a vector")
        if not np.isfinite(vals).all():
            raise InvalidInput("attribution values must be finite")

    def __len__(self) -> int:
        return len(self.feature_ids)

    def total(self) -> float:
        return float(sum(self.values.tolist()))


@dataclass(frozen=True)
class AttributionPair:
    """Answer-side and explanation-side attributions over one feature space."""

    answer: AttributionVector
    explanation: AttributionVector

    def __post_init__(self):
        if self.answer.modality is not self.explanation.modality:
            raise InvalidInput("paired vectors must share a modality")
        if self.answer.feature_ids != self.explanation.feature_ids:
            raise InvalidInput("paired vectors must cover identical features in identical order")


@dataclass(frozen=True)
class PredictionDistribution:
    """A probability distribution over answer classes."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen_array(self.probs, ndim=1)
        object.__setattr__(self, "probs", probs)
        if probs.shape[0] == 0:
            raise InvalidInput("distribution must cover at least one class")
        if not np.isfinite(probs).all():
            raise InvalidInput("probabilities must be finite")
        if probs.min() < -1e-9 or probs.max() > 1 + 1e-9:
            raise InvalidInput("probabilities must lie in [0, 1]")
        if abs(float(probs.sum()) - 1.0) > 1e-6:
            raise InvalidInput(f"probabilities must sum to 1, got {float(probs.sum())!r}")

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.probs))

    def __getitem__(self, j: int) -> float:
        return float(self.probs[j])


@dataclass(frozen=True)
class MetricRow:
    """Per-example record of the faithfulness scores.

    Vision columns are ``None`` for examples (or model configurations) without
    visual input, and ``sf_overall`` is reported only when both modality
    scores are present.
    """

    example_id: str
    sf_nlp: float | None = None
    sf_img: float | None = None
    sf_overall: float | None = None
    suff_nlp: float | None = None
    comp_nlp: float | None = None
    suff_img: float | None = None
    comp_img: float | None = None

    def __post_init__(self):
        for name in ("sf_nlp", "sf_img", "sf_overall"):
            v = getattr(self, name)
            if v is not None and not (-1e-12 <= v <= 1 + 1e-12):
                raise InvalidInput(f"{name} must lie in [0, 1], got {v!r}")
        if self.sf_overall is not None:
            if self.sf_nlp is None or self.sf_img is None:
                raise InvalidInput("sf_overall requires both modality scores")
            if self.sf_overall != (self.sf_nlp + self.sf_img) / 2.0:
                raise InvalidInput("sf_overall must equal the mean of the modality scores")

    @classmethod
    def from_scores(
        cls,
        example_id: str,
        sf_nlp: float | None,
        sf_img: float | None,
        suff_nlp: float | None = None,
        comp_nlp: float | None = None,
        suff_img: float | None = None,
        comp_img: float | None = None,
    ) -> "MetricRow":
        overall = None
        if sf_nlp is not None and sf_img is not None:
            overall = (sf_nlp + sf_img) / 2.0
        return cls(example_id, sf_nlp, sf_img, overall, suff_nlp, comp_nlp, suff_img, comp_img)

    def as_dict(self) -> dict:
        return {
            "id": self.example_id,
            **{c: getattr(self, c) for c in METRIC_COLUMNS},
        }


def softmax_normalize(logits: Sequence[float] | np.ndarray) -> PredictionDistribution:
    """Normalize raw classifier outputs into a probability distribution.

    Uses the max-shifted formulation, so the result is invariant under adding
    a constant to every logit and always preserves the argmax.
    """
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] == 0:
        raise InvalidInput("logits must be a non-empty vector")
    if not np.isfinite(arr).all():
        raise InvalidInput("logits must be finite")
    shifted = arr - arr.max()
    exp = np.exp(shifted)
    return PredictionDistribution(exp / exp.sum())


def cosine(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; defined as 0 when either vector has zero norm.

    The zero-norm convention keeps examples where one side received no
    relevance from propagating NaNs into aggregate scores.
    """
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape or va.ndim != 1:
        raise InvalidInput(f"cosine needs equal-length vectors, got {va.shape} and {vb.shape}")
    if not (np.isfinite(va).all() and np.isfinite(vb).all()):
        raise InvalidInput("cosine inputs must be finite")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        return 0.0
    value = float(np.dot(va, vb) / (na * nb))
    return max(-1.0, min(1.0, value))


def has_zero_norm(values: np.ndarray | Sequence[float]) -> bool:
    return float(np.linalg.norm(np.asarray(values, dtype=np.float64))) == 0.0
