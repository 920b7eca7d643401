#!/usr/bin/env python3
"""Generate a synthetic examples file for toy-scale pipeline runs.

Examples match the builtin toy oracle defaults (vocab 32, d_vis 6, 3 answer
classes).  Words occasionally span two tokens so word-level aggregation is
exercised.  Explanations are left to the pipeline to generate unless
--with-explanations is given.
"""
import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from faitheval import TaskExample, Token, write_examples  # noqa: E402

WORD_POOL = [
    "what", "sport", "color", "person", "riding", "holding", "standing",
    "playing", "red", "green", "tennis", "horse", "outside", "?",
]


def make_example(rng: np.random.Generator, index: int, vocab: int, d_vis: int,
                 n_classes: int, with_vision: bool, with_explanation: bool) -> TaskExample:
    n_words = int(rng.integers(3, 7))
    words = [WORD_POOL[int(rng.integers(0, len(WORD_POOL)))] for _ in range(n_words)]
    tokens = []
    for word_index in range(n_words):
        n_pieces = 2 if rng.random() < 0.3 else 1
        for _ in range(n_pieces):
            tokens.append(Token(int(rng.integers(1, vocab)), words[word_index], word_index))
    visual = None
    if with_vision:
        n_regions = int(rng.integers(2, 5))
        visual = rng.normal(0.0, 0.5, (n_regions, d_vis))
    explanation = None
    if with_explanation:
        explanation = tuple(int(t) for t in rng.integers(1, vocab, int(rng.integers(2, 5))))
    return TaskExample(
        id=f"ex{index:04d}",
        words=tuple(words),
        tokens=tuple(tokens),
        visual_features=visual,
        answer_class=int(rng.integers(0, n_classes)),
        explanation_tokens=explanation,
    )


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=50, help="number of examples")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--vocab", type=int, default=32)
    parser.add_argument("--d-vis", type=int, default=6)
    parser.add_argument("--n-classes", type=int, default=3)
    parser.add_argument("--vision-free", type=int, default=0,
                        help="number of examples without visual features")
    parser.add_argument("--with-explanations", action="store_true",
                        help="attach random explanation tokens instead of decoding")
    parser.add_argument("--out", default="examples.jsonl")
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    examples = [
        make_example(
            rng, i, args.vocab, args.d_vis, args.n_classes,
            with_vision=i >= args.vision_free,
            with_explanation=args.with_explanations,
        )
        for i in range(args.n)
    ]
    write_examples(examples, args.out)
    print(f"wrote {len(examples)} examples to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
