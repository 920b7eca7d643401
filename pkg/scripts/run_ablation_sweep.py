#!/usr/bin/env python3
"""Run the full pipeline for every explainer-input ablation on shared data.

Prints a table of mean scores per variant, the toy-scale analogue of
comparing model configurations that receive successively fewer redundant
inputs to their explanation head.
"""
import argparse
import json
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
VARIANTS = ("default", "NQ", "NA", "OU", "NU", "OA")
COLUMNS = ("sf_nlp", "sf_img", "sf_overall", "suff_nlp", "comp_nlp", "suff_img", "comp_img")


def run(cmd: list[str]) -> None:
    proc = subprocess.run(cmd, cwd=ROOT)
    if proc.returncode != 0:
        raise SystemExit(proc.returncode)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=30)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--steps", type=int, default=25)
    parser.add_argument("--workdir", default=None, help="keep outputs here instead of a tempdir")
    args = parser.parse_args()

    workdir = Path(args.workdir) if args.workdir else Path(tempfile.mkdtemp(prefix="ablations_"))
    workdir.mkdir(parents=True, exist_ok=True)
    examples = workdir / "examples.jsonl"
    run([sys.executable, "scripts/make_synthetic_examples.py",
         "--n", str(args.n), "--seed", str(args.seed), "--out", str(examples)])

    print(f"\n{'variant':8s} " + " ".join(f"{c:>11s}" for c in COLUMNS))
    for variant in VARIANTS:
        out = workdir / variant
        oracle = f"builtin:toy(seed={args.seed},ablation={variant})"
        run([sys.executable, "-m", "faitheval.cli", "score",
             "--examples", str(examples), "--oracle", oracle,
             "--steps", str(args.steps), "--out", str(out), "--jobs", "1"])
        aggregate = json.loads((out / "metrics.json").read_text())["aggregate"]
        cells = []
        for column in COLUMNS:
            mean = aggregate[column]["mean"]
            cells.append(f"{mean:11.4f}" if mean is not None else f"{'-':>11s}")
        print(f"{variant:8s} " + " ".join(cells))
    print(f"\noutputs under {workdir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
