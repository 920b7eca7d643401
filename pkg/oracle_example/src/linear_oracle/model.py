"""Linear-softmax model over a flat weight matrix.

The weight file is the toolkit's toy-model JSON format restricted to the
identity encoder, for which the classifier is linear in the inputs:

    logits = classifier_w @ (mean_t text[t] + mean_r (vis[r] @ vision_proj)) + b

For a fixed serving shape of T tokens and R regions this collapses to one
flat weight matrix W of shape [n_features x n_classes] over the feature
vector concat(text.flatten(), vis.flatten()):

    W[t*d + e, j]            = classifier_w[j, e] / T
    W[T*d + r*d_vis + q, j]  = (vision_proj @ classifier_w.T)[q, j] / R

so the gradient of the class-j logit is simply column j of W, independent of
the input.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

WEIGHT_FORMAT = "faitheval-toy-model"


class WeightFileError(ValueError):
    pass


class LinearOracleModel:
    def __init__(self, doc: dict, n_tokens: int, n_regions: int):
        if doc.get("format") != WEIGHT_FORMAT:
            raise WeightFileError(f"not a {WEIGHT_FORMAT} weight file")
        if doc.get("encoder") != "identity":
            raise WeightFileError("the linear oracle serves identity-encoder models only")
        if n_tokens < 1 or n_regions < 0:
            raise WeightFileError("serving shape must have n_tokens >= 1 and n_regions >= 0")
        dims = doc["dims"]
        self.d = int(dims["d"])
        self.d_vis = int(dims["d_vis"])
        self.classes = int(dims["n_classes"])
        self.vocab = int(dims["vocab"])
        self.n_tokens = n_tokens
        self.n_regions = n_regions

        weights = doc["weights"]
        cls_w = np.asarray(weights["classifier_w"], dtype=np.float64)   # [C x d]
        proj = np.asarray(weights["vision_proj"], dtype=np.float64)     # [d_vis x d]
        if cls_w.shape != (self.classes, self.d) or proj.shape != (self.d_vis, self.d):
            raise WeightFileError("weight matrices do not match the declared dims")
        blocks = [np.tile(cls_w.T / n_tokens, (n_tokens, 1))]
        if n_regions:
            blocks.append(np.tile(proj @ cls_w.T / n_regions, (n_regions, 1)))
        self.weight_matrix = np.vstack(blocks)                          # [n_features x C]
        self.bias = np.asarray(weights["classifier_b"], dtype=np.float64)
        self.n_features = self.weight_matrix.shape[0]

    @classmethod
    def from_file(cls, path: str | Path, n_tokens: int, n_regions: int) -> "LinearOracleModel":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise WeightFileError(f"cannot read weight file {path}: {exc}") from exc
        return cls(doc, n_tokens, n_regions)

    # -- request handling -------------------------------------------------

    def info(self) -> dict:
        return {
            "classes": self.classes,
            "vis_dims": [self.n_regions, self.d_vis],
            "vocab": self.vocab,
            "text_dims": [self.n_tokens, self.d],
        }

    def _features(self, payload: dict) -> tuple[np.ndarray, bool]:
        text = payload.get("text_embeddings")
        if text is None:
            raise ValueError("payload needs text_embeddings")
        text = np.asarray(text, dtype=np.float64)
        if text.shape != (self.n_tokens, self.d):
            raise ValueError(
                f"text_embeddings shape {list(text.shape)} != declared [{self.n_tokens}, {self.d}]"
            )
        parts = [text.reshape(-1)]
        vis = payload.get("visual_features")
        has_vision = vis is not None
        if self.n_regions:
            if not has_vision:
                raise ValueError("payload needs visual_features")
            vis = np.asarray(vis, dtype=np.float64)
            if vis.shape != (self.n_regions, self.d_vis):
                raise ValueError(
                    f"visual_features shape {list(vis.shape)} != declared "
                    f"[{self.n_regions}, {self.d_vis}]"
                )
            parts.append(vis.reshape(-1))
        elif has_vision:
            raise ValueError("this oracle serves no visual features")
        return np.concatenate(parts), has_vision

    def predict(self, payload: dict) -> dict:
        features, _ = self._features(payload)
        logits = self.weight_matrix.T @ features + self.bias
        shifted = logits - logits.max()
        exp = np.exp(shifted)
        return {"probs": (exp / exp.sum()).tolist()}

    def gradient(self, payload: dict, target) -> dict:
        features, has_vision = self._features(payload)
        if not isinstance(target, int):
            raise ValueError(
                "this oracle serves answer-class gradients only (integer target)"
            )
        if not 0 <= target < self.classes:
            raise ValueError(f"class {target} out of range for {self.classes} classes")
        column = self.weight_matrix[:, target]
        n_text = self.n_tokens * self.d
        grads = {
            "text_embeddings": column[:n_text].reshape(self.n_tokens, self.d).tolist(),
            "visual_features": column[n_text:].reshape(self.n_regions, self.d_vis).tolist()
            if has_vision
            else None,
        }
        return {"grads": grads}
