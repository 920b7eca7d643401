"""Deterministic toy vision-language models, differentiable end to end.

A :class:`ToyVLModel` couples a classifier head ("task") and an autoregressive
next-token head ("explainer") over shared inputs, small enough that every
pipeline stage can be verified at desk scale.  Gradients come from the
reverse-mode engine in :mod:`faitheval.autodiff`; forwards have a plain numpy
twin so finite-difference checks exercise an independent code path.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .core import PAD_TOKEN_ID, PredictionDistribution, TaskExample, softmax_normalize
from .errors import IngestError, InvalidInput
from .oracle import (
    AnswerTarget,
    ExplanationTarget,
    GradientRecord,
    InputCodec,
    ModelInputs,
    OracleInfo,
    Target,
)


@dataclass(frozen=True)
class ToyDims:
    vocab: int = 32
    d: int = 8
    d_vis: int = 6
    d_hidden: int = 8
    n_classes: int = 3
    max_explanation_len: int = 6

    def __post_init__(self):
        for name in ("vocab", "d", "d_vis", "d_hidden", "n_classes", "max_explanation_len"):
            if getattr(self, name) < 1:
                raise InvalidInput(f"dimension {name} must be positive")
        if self.vocab <= PAD_TOKEN_ID:
            raise InvalidInput("vocabulary must include the PAD token")


@dataclass(frozen=True)
class ExplainerInputs:
    """Which inputs the next-token head receives.

    ``task_features`` is the shared encoder output (the only path through
    which visual features can influence the explainer); ``question`` re-feeds
    the raw pooled text embedding; ``answer`` injects an embedding of the
    predicted class.  The generated prefix is always consumed.
    """

    task_features: bool = True
    question: bool = True
    answer: bool = True

    def __post_init__(self):
        if not (self.task_features or self.question or self.answer):
            raise InvalidInput("explainer needs at least one input")

    @property
    def language_reaches_explainer(self) -> bool:
        return self.task_features or self.question

    @property
    def vision_reaches_explainer(self) -> bool:
        return self.task_features


# Presets for successively removing redundant explainer inputs, from the
# full configuration down to an answer-only baseline.
ABLATION_PRESETS: dict[str, ExplainerInputs] = {
    "default": ExplainerInputs(task_features=True, question=True, answer=True),
    "NQ": ExplainerInputs(task_features=True, question=False, answer=True),
    "NA": ExplainerInputs(task_features=True, question=True, answer=False),
    "OU": ExplainerInputs(task_features=True, question=False, answer=False),
    "NU": ExplainerInputs(task_features=False, question=True, answer=True),
    "OA": ExplainerInputs(task_features=False, question=False, answer=True),
}

ENCODERS = ("tanh", "identity")


class ToyVLModel:
    """Immutable toy model; all forward and gradient calls are pure."""

    def __init__(
        self,
        dims: ToyDims,
        encoder: str,
        explainer_inputs: ExplainerInputs,
        weights: dict[str, np.ndarray],
        seed: int | None = None,
    ):
        if encoder not in ENCODERS:
            raise InvalidInput(f"unknown encoder {encoder!r}")
        if encoder == "identity" and dims.d_hidden != dims.d:
            raise InvalidInput("identity encoder requires d_hidden == d")
        self.dims = dims
        self.encoder = encoder
        self.explainer_inputs = explainer_inputs
        self.seed = seed
        expected = self._weight_shapes(dims, explainer_inputs)
        for name, shape in expected.items():
            if name not in weights:
                raise InvalidInput(f"missing weight {name!r}")
            arr = np.asarray(weights[name], dtype=np.float64)
            if arr.shape != shape:
                raise InvalidInput(f"weight {name!r} has shape {arr.shape}, expected {shape}")
            if not np.isfinite(arr).all():
                raise InvalidInput(f"weight {name!r} contains non-finite values")
            arr.setflags(write=False)
            setattr(self, "_" + name, arr)
        self.weights = {name: getattr(self, "_" + name) for name in expected}

    @staticmethod
    def _explainer_in_dim(dims: ToyDims, cfg: ExplainerInputs) -> int:
        width = dims.d  # prefix summary is always consumed
        if cfg.task_features:
            width += dims.d_hidden
        if cfg.question:
            width += dims.d
        if cfg.answer:
            width += dims.d
        return width

    @classmethod
    def _weight_shapes(cls, dims: ToyDims, cfg: ExplainerInputs) -> dict[str, tuple]:
        return {
            "embedding": (dims.vocab, dims.d),
            "vision_proj": (dims.d_vis, dims.d),
            "encoder_w": (dims.d_hidden, dims.d),
            "encoder_b": (dims.d_hidden,),
            "classifier_w": (dims.n_classes, dims.d_hidden),
            "classifier_b": (dims.n_classes,),
            "answer_embedding": (dims.n_classes, dims.d),
            "explainer_w": (dims.vocab, cls._explainer_in_dim(dims, cfg)),
            "explainer_b": (dims.vocab,),
        }

    # -- input handling ----------------------------------------------------

    @property
    def codec(self) -> InputCodec:
        return InputCodec(self._embedding, pad_token_id=PAD_TOKEN_ID)

    def _check_inputs(self, inputs: ModelInputs):
        if inputs.text_embeddings is None:
            raise InvalidInput("toy model requires text input")
        if inputs.text_embeddings.shape[1] != self.dims.d:
            raise InvalidInput(
                f"text embedding width {inputs.text_embeddings.shape[1]} != d={self.dims.d}"
            )
        if inputs.visual_features is not None and inputs.visual_features.shape[1] != self.dims.d_vis:
            raise InvalidInput(
                f"visual feature width {inputs.visual_features.shape[1]} != d_vis={self.dims.d_vis}"
            )

    def materialize(self, example: TaskExample, **kwargs) -> ModelInputs:
        return self.codec.materialize(example, **kwargs)

    # -- numpy forward (independent of the autodiff tape) -------------------

    def _pooled_np(self, text: np.ndarray, vis: np.ndarray | None) -> np.ndarray:
        pooled = text.mean(axis=0)
        if vis is not None and vis.shape[0] > 0:
            pooled = pooled + (vis @ self._vision_proj).mean(axis=0)
        return pooled

    def _encode_np(self, text: np.ndarray, vis: np.ndarray | None) -> np.ndarray:
        pooled = self._pooled_np(text, vis)
        if self.encoder == "identity":
            return pooled
        return np.tanh(self._encoder_w @ pooled + self._encoder_b)

    def classifier_logits(self, inputs: ModelInputs) -> np.ndarray:
        self._check_inputs(inputs)
        h = self._encode_np(inputs.text_embeddings, inputs.visual_features)
        return self._classifier_w @ h + self._classifier_b

    def _prefix_summary_np(self, prefix_ids: Sequence[int]) -> np.ndarray:
        if len(prefix_ids) == 0:
            return np.zeros(self.dims.d)
        return self.codec.embed(prefix_ids).mean(axis=0)

    def explainer_logits(
        self, inputs: ModelInputs, prefix_ids: Sequence[int], answer_class: int
    ) -> np.ndarray:
        self._check_inputs(inputs)
        if not 0 <= answer_class < self.dims.n_classes:
            raise InvalidInput(f"answer class {answer_class} out of range")
        parts = []
        if self.explainer_inputs.task_features:
            parts.append(self._encode_np(inputs.text_embeddings, inputs.visual_features))
        if self.explainer_inputs.question:
            parts.append(inputs.text_embeddings.mean(axis=0))
        if self.explainer_inputs.answer:
            parts.append(self._answer_embedding[answer_class])
        parts.append(self._prefix_summary_np(prefix_ids))
        z = np.concatenate(parts)
        return self._explainer_w @ z + self._explainer_b

    # -- autodiff forward ----------------------------------------------------

    def _encode_sym(self, text: ad.Var, vis: ad.Var | None) -> ad.Var:
        pooled = ad.mean_rows(text)
        if vis is not None:
            pooled = pooled + ad.mean_rows(ad.matmul(vis, ad.constant(self._vision_proj)))
        if self.encoder == "identity":
            return pooled
        pre = ad.matvec(ad.constant(self._encoder_w), pooled) + ad.constant(self._encoder_b)
        return ad.tanh(pre)

    def _target_scalar(self, inputs: ModelInputs, target: Target) -> tuple[ad.Var, ad.Var, ad.Var | None]:
        """Build the tape for one scalar output; returns (scalar, text leaf, vis leaf)."""
        self._check_inputs(inputs)
        text = ad.Var(inputs.text_embeddings)
        vis = None
        if inputs.visual_features is not None and inputs.visual_features.shape[0] > 0:
            vis = ad.Var(inputs.visual_features)
        if isinstance(target, AnswerTarget):
            if not 0 <= target.class_index < self.dims.n_classes:
                raise InvalidInput(f"class index {target.class_index} out of range")
            h = self._encode_sym(text, vis)
            logits = ad.matvec(ad.constant(self._classifier_w), h) + ad.constant(self._classifier_b)
            return ad.pick(logits, target.class_index), text, vis
        if isinstance(target, ExplanationTarget):
            generated = inputs.explanation_tokens or ()
            if not 0 <= target.step <= len(generated):
                raise InvalidInput(f"step {target.step} beyond generated length {len(generated)}")
            if not 0 <= target.token_id < self.dims.vocab:
                raise InvalidInput(f"token id {target.token_id} outside vocabulary")
            if inputs.answer_class is None:
                raise InvalidInput("explanation gradient requires answer_class in the payload")
            prefix = generated[: target.step]
            parts = []
            if self.explainer_inputs.task_features:
                parts.append(self._encode_sym(text, vis))
            if self.explainer_inputs.question:
                parts.append(ad.mean_rows(text))
            if self.explainer_inputs.answer:
                parts.append(ad.constant(self._answer_embedding[inputs.answer_class]))
            parts.append(ad.constant(self._prefix_summary_np(prefix)))
            z = ad.concat(parts)
            logits = ad.matvec(ad.constant(self._explainer_w), z) + ad.constant(self._explainer_b)
            return ad.pick(logits, target.token_id), text, vis
        raise InvalidInput(f"unknown target {target!r}")

    # -- oracle interface ------------------------------------------------

    def predict(self, inputs: ModelInputs) -> PredictionDistribution:
        return softmax_normalize(self.classifier_logits(inputs))

    def gradient(self, inputs: ModelInputs, target: Target) -> GradientRecord:
        scalar, text, vis = self._target_scalar(inputs, target)
        ad.backward(scalar)
        # A leaf that never reached the target (e.g. vision when the explainer
        # has no task-feature path) gets an exact zero gradient.
        text_grad = text.grad if text.grad is not None else np.zeros_like(inputs.text_embeddings)
        vision_grad = None
        if inputs.visual_features is not None:
            if vis is None or vis.grad is None:
                vision_grad = np.zeros_like(inputs.visual_features)
            else:
                vision_grad = vis.grad
        return GradientRecord(text=text_grad, vision=vision_grad)

    def gradient_batch(self, inputs_list: Sequence[ModelInputs], target: Target) -> list[GradientRecord]:
        return [self.gradient(inputs, target) for inputs in inputs_list]

    def target_value(self, inputs: ModelInputs, target: Target) -> float:
        """The raw scalar being differentiated (logit, pre-softmax)."""
        if isinstance(target, AnswerTarget):
            return float(self.classifier_logits(inputs)[target.class_index])
        generated = inputs.explanation_tokens or ()
        logits = self.explainer_logits(
            inputs, generated[: target.step], answer_class=inputs.answer_class
        )
        return float(logits[target.token_id])

    def info(self) -> OracleInfo:
        modalities = []
        if self.explainer_inputs.language_reaches_explainer:
            modalities.append("language")
        if self.explainer_inputs.vision_reaches_explainer:
            modalities.append("vision")
        return OracleInfo(
            classes=self.dims.n_classes,
            vis_dims=(-1, self.dims.d_vis),
            vocab=self.dims.vocab,
            text_dims=(-1, self.dims.d),
            explanation_modalities=tuple(modalities),
        )

    # -- generation ------------------------------------------------------

    def explainer_step(
        self,
        example: TaskExample,
        prefix_ids: Sequence[int],
        answer_class: int | None = None,
    ) -> PredictionDistribution:
        """Next-token distribution given the generated prefix so far."""
        if len(prefix_ids) >= self.dims.max_explanation_len:
            raise InvalidInput(
                f"prefix of length {len(prefix_ids)} leaves no room under "
                f"max_explanation_len={self.dims.max_explanation_len}"
            )
        if answer_class is None:
            answer_class = example.answer_class
        inputs = self.materialize(example)
        return softmax_normalize(self.explainer_logits(inputs, prefix_ids, answer_class))

    def generate(
        self,
        example: TaskExample,
        answer_class: int | None = None,
        max_len: int | None = None,
    ) -> tuple[int, ...]:
        """Greedy decoding: repeatedly append the argmax next token."""
        if max_len is None:
            max_len = self.dims.max_explanation_len
        if max_len > self.dims.max_explanation_len:
            raise InvalidInput("max_len exceeds configured max_explanation_len")
        prefix: list[int] = []
        while len(prefix) < max_len:
            dist = self.explainer_step(example, prefix, answer_class)
            prefix.append(dist.argmax)
        return tuple(prefix)


def make_toy_model(
    seed: int,
    dims: ToyDims = ToyDims(),
    encoder: str = "tanh",
    ablation: str | ExplainerInputs = "default",
) -> ToyVLModel:
    """Reproducible random model: every matrix is uniform +-0.5/sqrt(fan_in).

    Matrices are drawn in a fixed order (embedding, vision_proj, encoder_w,
    classifier_w, answer_embedding, explainer_w) so a seed pins the weights;
    biases are zero.
    """
    if isinstance(ablation, str):
        if ablation not in ABLATION_PRESETS:
            raise InvalidInput(
                f"unknown ablation {ablation!r}; choose from {sorted(ABLATION_PRESETS)}"
            )
        cfg = ABLATION_PRESETS[ablation]
    else:
        cfg = ablation
    rng = np.random.default_rng(seed)

    def draw(rows: int, cols: int, fan_in: int) -> np.ndarray:
        limit = 0.5 / np.sqrt(fan_in)
        return rng.uniform(-limit, limit, size=(rows, cols))

    weights = {
        "embedding": draw(dims.vocab, dims.d, dims.d),
        "vision_proj": draw(dims.d_vis, dims.d, dims.d_vis),
        "encoder_w": draw(dims.d_hidden, dims.d, dims.d),
        "encoder_b": np.zeros(dims.d_hidden),
        "classifier_w": draw(dims.n_classes, dims.d_hidden, dims.d_hidden),
        "classifier_b": np.zeros(dims.n_classes),
        "answer_embedding": draw(dims.n_classes, dims.d, dims.d),
        "explainer_w": draw(
            dims.vocab,
            ToyVLModel._explainer_in_dim(dims, cfg),
            ToyVLModel._explainer_in_dim(dims, cfg),
        ),
        "explainer_b": np.zeros(dims.vocab),
    }
    return ToyVLModel(dims, encoder, cfg, weights, seed=seed)


def forward_classifier(model: ToyVLModel, example: TaskExample) -> np.ndarray:
    """Deterministic classifier logits for a token-level example."""
    return model.classifier_logits(model.materialize(example))


# ---------------------------------------------------------------------------
# Weight file (documented JSON format, row-major nested lists)
# ---------------------------------------------------------------------------

WEIGHT_FORMAT = "faitheval-toy-model"


def save_model(model: ToyVLModel, path: str | Path) -> None:
    doc = {
        "format": WEIGHT_FORMAT,
        "version": 1,
        "kind": "toy_vl",
        "seed": model.seed,
        "encoder": model.encoder,
        "dims": {
            "vocab": model.dims.vocab,
            "d": model.dims.d,
            "d_vis": model.dims.d_vis,
            "d_hidden": model.dims.d_hidden,
            "n_classes": model.dims.n_classes,
            "max_explanation_len": model.dims.max_explanation_len,
        },
        "explainer_inputs": {
            "task_features": model.explainer_inputs.task_features,
            "question": model.explainer_inputs.question,
            "answer": model.explainer_inputs.answer,
        },
        "weights": {name: arr.tolist() for name, arr in model.weights.items()},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> ToyVLModel:
    path = Path(path)
    if not path.exists():
        raise IngestError(f"no such file: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IngestError(f"invalid weight file {path}: {exc}")
    if doc.get("format") != WEIGHT_FORMAT:
        raise IngestError(f"not a {WEIGHT_FORMAT} file: {path}")
    try:
        dims = ToyDims(**doc["dims"])
        cfg = ExplainerInputs(**doc["explainer_inputs"])
        weights = {name: np.asarray(arr, dtype=np.float64) for name, arr in doc["weights"].items()}
        return ToyVLModel(dims, doc["encoder"], cfg, weights, seed=doc.get("seed"))
    except (KeyError, TypeError, ValueError, InvalidInput) as exc:
        raise IngestError(f"invalid weight file {path}: {exc}")
