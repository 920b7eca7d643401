"""Built-in verification suites behind the ``selftest`` CLI command.

Each suite checks one numerical property end to end: exactness of integrated
gradients on linear models, completeness convergence on tanh MLPs, reverse-
mode gradients against central finite differences, cosine scale invariance,
and agreement of the perturbation metrics with brute-force enumeration.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attribution import IGConfig, completeness_residual, integrated_gradients
from .core import TaskExample, Token, cosine
from .faithfulness import nle_comprehensiveness, nle_sufficiency
from .core import AttributionVector, Modality
from .oracle import AnswerTarget, GradientRecord, ModelInputs
from .toymodel import ToyDims, make_toy_model


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


class RandomMlp:
    """Seeded tanh MLP (n_in -> n_hidden -> n_out) over a flat feature row.

    Weights are uniform +-0.5/sqrt(fan_in); the probe input is drawn from
    N(0, 0.5^2), keeping the network inside a moderately saturating regime.
    The forward pass is plain numpy so finite differences exercise a code
    path independent of the autodiff tape.
    """

    def __init__(self, seed: int, n_in: int = 10, n_hidden: int = 8, n_out: int = 3):
        rng = np.random.default_rng(seed)
        self.w1 = rng.uniform(-0.5 / math.sqrt(n_in), 0.5 / math.sqrt(n_in), (n_hidden, n_in))
        self.w2 = rng.uniform(
            -0.5 / math.sqrt(n_hidden), 0.5 / math.sqrt(n_hidden), (n_out, n_hidden)
        )
        self.probe_input = rng.normal(0.0, 0.5, n_in)
        self.n_in = n_in

    def logits_np(self, features: np.ndarray) -> np.ndarray:
        return self.w2 @ np.tanh(self.w1 @ features)

    def gradient(self, inputs: ModelInputs, target: AnswerTarget) -> GradientRecord:
        leaf = ad.Var(inputs.visual_features)
        x = ad.mean_rows(leaf)
        h = ad.tanh(ad.matvec(ad.constant(self.w1), x))
        out = ad.matvec(ad.constant(self.w2), h)
        ad.backward(ad.pick(out, target.class_index))
        return GradientRecord(vision=leaf.grad)

    def gradient_batch(self, inputs_list, target):
        return [self.gradient(i, target) for i in inputs_list]

    def target_value(self, inputs: ModelInputs, target: AnswerTarget) -> float:
        return float(self.logits_np(inputs.visual_features[0])[target.class_index])


class _LinearOracle:
    """f(x) = w . x over one feature row; gradient is w everywhere."""

    def __init__(self, w: np.ndarray):
        self.w = np.asarray(w, dtype=np.float64)

    def gradient(self, inputs: ModelInputs, target: AnswerTarget) -> GradientRecord:
        return GradientRecord(vision=self.w.reshape(1, -1).copy())

    def target_value(self, inputs: ModelInputs, target: AnswerTarget) -> float:
        return float(self.w @ inputs.visual_features[0])


def _as_row(x) -> ModelInputs:
    return ModelInputs(visual_features=np.asarray(x, dtype=np.float64).reshape(1, -1))


def check_ig_linear_exactness() -> CheckResult:
    """IG on a linear oracle equals (x - x') * w for any step count."""
    start = time.perf_counter()
    w = np.array([2.0, -1.0, 0.5])
    x = np.array([1.0, 2.0, 3.0])
    expected = np.array([2.0, -2.0, 1.5])
    oracle = _LinearOracle(w)
    worst = 0.0
    for m in (1, 10, 100):
        ig = integrated_gradients(
            oracle, _as_row(x), _as_row(np.zeros(3)), AnswerTarget(0),
            IGConfig(steps=m, baseline="all_zero"),
        )
        worst = max(worst, float(np.max(np.abs(ig["visual_features"][0] - expected))))
    return CheckResult(
        "ig_linear_exactness",
        worst <= 1e-12,
        f"max deviation {worst:.3e} (tolerance 1e-12)",
        time.perf_counter() - start,
    )


def check_ig_completeness(n_instances: int = 100) -> CheckResult:
    """Attributions sum to f(x) - f(x') within 0.1% at m=300; residual shrinks with m."""
    start = time.perf_counter()
    steps = (10, 50, 300)
    residuals = {m: [] for m in steps}
    worst_rel = 0.0
    for seed in range(n_instances):
        mlp = RandomMlp(seed)
        inputs = _as_row(mlp.probe_input)
        baseline = _as_row(np.zeros(mlp.n_in))
        logits = mlp.logits_np(mlp.probe_input)
        target = AnswerTarget(int(np.argmax(np.abs(logits))))
        for m in steps:
            ig = integrated_gradients(
                mlp, inputs, baseline, target, IGConfig(steps=m, baseline="all_zero")
            )
            resid, scale = completeness_residual(mlp, inputs, baseline, target, ig)
            residuals[m].append(resid)
            if m == 300:
                worst_rel = max(worst_rel, resid / scale if scale > 0 else math.inf)
    means = [float(np.mean(residuals[m])) for m in steps]
    monotone = means[0] >= means[1] >= means[2]
    passed = worst_rel <= 1e-3 and monotone
    return CheckResult(
        "ig_completeness",
        passed,
        f"worst relative residual {worst_rel:.3e} at m=300 (tolerance 1e-3); "
        f"mean residuals {means[0]:.2e} >= {means[1]:.2e} >= {means[2]:.2e}: {monotone}",
        time.perf_counter() - start,
    )


def check_gradient_finite_difference(n_points: int = 1000) -> CheckResult:
    """Reverse-mode gradients match central finite differences (h=1e-5)."""
    start = time.perf_counter()
    h = 1e-5
    n_models = 20
    per_model = n_points // n_models
    worst = 0.0
    for seed in range(n_models):
        mlp = RandomMlp(seed)
        rng = np.random.default_rng(10_000 + seed)
        target = AnswerTarget(int(seed % 3))
        for _ in range(per_model):
            x = rng.normal(0.0, 1.0, mlp.n_in)
            grad = mlp.gradient(_as_row(x), target).vision[0]
            for i in range(mlp.n_in):
                up = x.copy()
                up[i] += h
                dn = x.copy()
                dn[i] -= h
                fd = (
                    mlp.logits_np(up)[target.class_index]
                    - mlp.logits_np(dn)[target.class_index]
                ) / (2 * h)
                err = abs(grad[i] - fd) / max(abs(fd), abs(grad[i]), 1e-6)
                worst = max(worst, err)
    return CheckResult(
        "gradient_vs_finite_difference",
        worst <= 1e-4,
        f"worst relative error {worst:.3e} over {n_models * per_model} points (tolerance 1e-4)",
        time.perf_counter() - start,
    )


def check_cosine_scale_invariance(n_pairs: int = 1000) -> CheckResult:
    """cos(a, c*b) equals cos(a, b) for c > 0: magnitude is ignored."""
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(n_pairs):
        n = int(rng.integers(2, 64))
        a = rng.normal(0, 1, n)
        b = rng.normal(0, 1, n)
        c = float(rng.uniform(1e-6, 10.0))
        worst = max(worst, abs(cosine(a, c * b) - cosine(a, b)))
    return CheckResult(
        "cosine_scale_invariance",
        worst <= 1e-9,
        f"worst deviation {worst:.3e} over {n_pairs} pairs (tolerance 1e-9)",
        time.perf_counter() - start,
    )


def _small_example(rng: np.random.Generator, n_words: int, n_regions: int, dims: ToyDims) -> TaskExample:
    token_ids = rng.integers(1, dims.vocab, n_words)
    return TaskExample(
        id="aopc",
        words=tuple(f"w{i}" for i in range(n_words)),
        tokens=tuple(Token(int(t), f"w{i}", i) for i, t in enumerate(token_ids)),
        visual_features=rng.normal(0, 1, (n_regions, dims.d_vis)) if n_regions else None,
        answer_class=0,
    )


def _brute_force_aopc(model, example, values, modality, bins, j, keep_only):
    """Independent enumeration: rank by (-value, id), mask by direct rebuild."""
    n = len(values)
    ranked = sorted(range(n), key=lambda i: (-values[i], i))
    p_full = model.predict(model.codec.materialize(example)).probs[j]
    total = 0.0
    for k in bins:
        count = min(math.ceil(k * n), n)
        selected = set(ranked[:count])
        masked = set(range(n)) - selected if keep_only else selected
        if modality == "language":
            tokens = tuple(
                Token(0, "[PAD]", t.word_index) if t.word_index in masked else t
                for t in example.tokens
            )
            vf = example.visual_features
        else:
            tokens = example.tokens
            vf = example.visual_features.copy()
            for rid in masked:
                vf[rid, :] = 0.0
        rebuilt = TaskExample(example.id, example.words, tokens, vf, example.answer_class)
        p_masked = model.predict(model.codec.materialize(rebuilt)).probs[j]
        total += float(p_full - p_masked)
    return total / len(bins)


def check_aopc_brute_force() -> CheckResult:
    """Sufficiency/comprehensiveness equal exhaustive masked-forward enumeration."""
    start = time.perf_counter()
    dims = ToyDims(vocab=16, d=4, d_vis=3, d_hidden=4, n_classes=3)
    bins = (0.25, 0.5, 1.0)
    worst = 0.0
    for seed in (0, 1, 2):
        model = make_toy_model(seed, dims, encoder="identity")
        rng = np.random.default_rng(100 + seed)
        example = _small_example(rng, n_words=5, n_regions=3, dims=dims)
        j = model.predict(model.codec.materialize(example)).argmax
        for modality, n in (("language", 5), ("vision", 3)):
            values = rng.normal(0, 1, n)
            vec = AttributionVector(
                Modality.LANGUAGE if modality == "language" else Modality.VISION,
                tuple(range(n)),
                values,
            )
            got_comp = nle_comprehensiveness(model, example, vec, bins, j)
            want_comp = _brute_force_aopc(model, example, values.tolist(), modality, bins, j, False)
            got_suff = nle_sufficiency(model, example, vec, bins, j)
            want_suff = _brute_force_aopc(model, example, values.tolist(), modality, bins, j, True)
            worst = max(worst, abs(got_comp - want_comp), abs(got_suff - want_suff))
    return CheckResult(
        "aopc_brute_force",
        worst <= 1e-9,
        f"max deviation from enumeration {worst:.3e} (tolerance 1e-9)",
        time.perf_counter() - start,
    )


ALL_CHECKS = (
    check_ig_linear_exactness,
    check_ig_completeness,
    check_gradient_finite_difference,
    check_cosine_scale_invariance,
    check_aopc_brute_force,
)


def run_selftest(checks=ALL_CHECKS) -> list[CheckResult]:
    return [check() for check in checks]
