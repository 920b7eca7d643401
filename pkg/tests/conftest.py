import json
from pathlib import Path

import hypothesis
import numpy as np
import pytest

from faitheval import TaskExample, Token, make_toy_model

hypothesis.settings.register_profile("ci", deadline=None, max_examples=60)
hypothesis.settings.load_profile("ci")

FIXTURES = Path(__file__).parent / "fixtures"


def build_example(
    example_id="e1",
    token_ids=(3, 4, 5),
    word_indices=(0, 1, 2),
    words=("what", "sport", "?"),
    n_regions=2,
    d_vis=6,
    answer_class=1,
    explanation_tokens=None,
    vision_seed=5,
):
    tokens = tuple(
        Token(tid, words[wi], wi) for tid, wi in zip(token_ids, word_indices)
    )
    visual = None
    if n_regions:
        rng = np.random.default_rng(vision_seed)
        visual = rng.normal(0.0, 0.5, (n_regions, d_vis))
    return TaskExample(
        id=example_id,
        words=words,
        tokens=tokens,
        visual_features=visual,
        answer_class=answer_class,
        explanation_tokens=explanation_tokens,
    )


@pytest.fixture(scope="session")
def toy_model():
    return make_toy_model(42)


@pytest.fixture(scope="session")
def linear_model():
    return make_toy_model(42, encoder="identity")


@pytest.fixture
def example():
    return build_example()


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


def load_fixture(name):
    return json.loads((FIXTURES / name).read_text(encoding="utf-8"))


def flat_spec_from_toy(model, n_tokens=3, n_regions=2, seed=0):
    """Flat [n_features x classes] weights equivalent to an identity-encoder model."""
    d, dv = model.dims.d, model.dims.d_vis
    cls_w = model.weights["classifier_w"]
    proj = model.weights["vision_proj"]
    w_text = np.tile(cls_w.T / n_tokens, (n_tokens, 1))
    w_vis = np.tile(proj @ cls_w.T / n_regions, (n_regions, 1))
    rng = np.random.default_rng(seed)
    n_features = n_tokens * d + n_regions * dv
    return {
        "weights": np.vstack([w_text, w_vis]).tolist(),
        "bias": model.weights["classifier_b"].tolist(),
        "expl_weights": rng.normal(0, 0.1, (n_features, model.dims.vocab)).tolist(),
        "text_dims": [n_tokens, d],
        "vis_dims": [n_regions, dv],
        "classes": model.dims.n_classes,
        "vocab": model.dims.vocab,
    }
