"""Command-line pipeline: attribute -> score -> analyze, plus selftest.

Exit codes: 0 success, 1 property/metric failure, 2 usage or I/O error.
Every run echoes its full configuration into ``<out>/config.json``; reruns
with the same configuration produce byte-identical outputs.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .attribution import (
    IGConfig,
    ModalAttribution,
    attribute_answer,
    attribute_explanation,
)
from .analysis import build_report, input_group_influence
from .core import AttributionPair, AttributionVector, MetricRow, Modality, TaskExample
from .errors import FaithevalError, IngestError, InvalidInput, OracleError
from .faithfulness import (
    DEFAULT_BINS,
    attribution_similarity,
    metric_row,
    nle_comprehensiveness,
    nle_sufficiency,
)
from .oracle import (
    OracleSession,
    attribution_to_record,
    load_attributions,
    load_examples,
    read_metrics,
    write_attributions,
    write_metrics,
)
from .selftest import run_selftest
from .toymodel import ABLATION_PRESETS, ToyDims, load_model, make_toy_model

log = logging.getLogger("faitheval")

_BUILTIN_RE = re.compile(r"^builtin:toy(?:\((?P<args>.*)\))?$")


@dataclass(frozen=True)
class RunConfig:
    examples: str
    oracle: str
    weights: str | None = None
    steps: int = 50
    bins: tuple[float, ...] = DEFAULT_BINS
    ranking: str = "signed"
    granularity: str = "region"
    out: str = "out"
    jobs: int = 0  # 0 = logical core count
    seed: int = 42
    timeout: float = 30.0

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidInput("--steps must be >= 1")
        if self.ranking not in ("signed", "abs"):
            raise InvalidInput("--ranking must be 'signed' or 'abs'")
        if not self.bins:
            raise InvalidInput("--bins must name at least one fraction")
        for b in self.bins:
            if not 0.0 < b <= 1.0:
                raise InvalidInput(f"bin fraction {b} outside (0, 1]")
        if self.jobs < 0:
            raise InvalidInput("--jobs must be >= 0")

    @property
    def effective_jobs(self) -> int:
        return self.jobs if self.jobs > 0 else (os.cpu_count() or 1)

    def ig_config(self) -> IGConfig:
        return IGConfig(steps=self.steps, vision_granularity=self.granularity)

    def as_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["bins"] = list(self.bins)
        doc["version"] = __version__
        return doc


def parse_bins(text: str) -> tuple[float, ...]:
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise InvalidInput(f"bad --bins value: {exc}")
    if any(v > 1.0 for v in values):
        values = [v / 100.0 for v in values]  # convenience: percentages
    return tuple(values)


# ---------------------------------------------------------------------------
# Oracle construction
# ---------------------------------------------------------------------------


def parse_builtin_spec(spec: str, default_seed: int) -> dict:
    match = _BUILTIN_RE.match(spec)
    if not match:
        raise InvalidInput(f"not a builtin oracle spec: {spec!r}")
    kwargs: dict = {}
    args = match.group("args") or ""
    for part in filter(None, (p.strip() for p in args.split(","))):
        if "=" not in part:
            raise InvalidInput(f"builtin oracle option {part!r} must be key=value")
        key, value = (s.strip() for s in part.split("=", 1))
        kwargs[key] = value
    dims = ToyDims(
        vocab=int(kwargs.pop("vocab", 32)),
        d=int(kwargs.pop("d", 8)),
        d_vis=int(kwargs.pop("d_vis", 6)),
        d_hidden=int(kwargs.pop("d_hidden", 8)),
        n_classes=int(kwargs.pop("n_classes", 3)),
        max_explanation_len=int(kwargs.pop("max_len", 6)),
    )
    spec_dict = {
        "seed": int(kwargs.pop("seed", default_seed)),
        "dims": dims,
        "encoder": kwargs.pop("encoder", "tanh"),
        "ablation": kwargs.pop("ablation", "default"),
    }
    if kwargs:
        raise InvalidInput(f"unknown builtin oracle options: {sorted(kwargs)}")
    if spec_dict["ablation"] not in ABLATION_PRESETS:
        raise InvalidInput(
            f"unknown ablation {spec_dict['ablation']!r}; choose from {sorted(ABLATION_PRESETS)}"
        )
    return spec_dict


def build_oracle(config: RunConfig):
    """Returns (oracle, close_callable)."""
    if config.oracle.startswith("builtin:"):
        spec = parse_builtin_spec(config.oracle, config.seed)
        model = make_toy_model(
            spec["seed"], spec["dims"], encoder=spec["encoder"], ablation=spec["ablation"]
        )
        return model, lambda: None
    codec = None
    if config.weights:
        codec = load_model(config.weights).codec
    session = OracleSession(config.oracle, timeout=config.timeout, codec=codec)
    return session, session.close


def _oracle_info(oracle):
    info = oracle.info
    return info() if callable(info) else info


# ---------------------------------------------------------------------------
# Per-example work
# ---------------------------------------------------------------------------


def _attribute_example(oracle, example: TaskExample, ig_config: IGConfig):
    """(predicted class, generated tokens, answer attribution, explanation attribution)."""
    codec = oracle.codec
    if codec is None:
        raise InvalidInput("this oracle needs --weights to materialize token embeddings")
    classes = _oracle_info(oracle).classes
    if example.answer_class >= classes:
        raise InvalidInput(
            f"example {example.id!r}: answer_class {example.answer_class} out of range "
            f"for {classes} classes"
        )
    j = oracle.predict(codec.materialize(example)).argmax
    generated = example.explanation_tokens
    if not generated:
        if not hasattr(oracle, "generate"):
            raise InvalidInput(
                f"example {example.id!r} has no explanation_tokens and the oracle "
                "cannot generate them"
            )
        generated = oracle.generate(example, answer_class=j)
    answer = attribute_answer(oracle, example, ig_config, target_class=j)
    explanation = attribute_explanation(oracle, example, generated, ig_config, target_class=j)
    return j, tuple(generated), answer, explanation


def _attribution_records(example_id: str, attr: ModalAttribution, target: str, cfg: dict):
    records = []
    for vector in (attr.language, attr.vision):
        if vector is None:
            continue
        records.append(
            attribution_to_record(
                example_id, target, vector.modality, vector.feature_ids, vector.values, cfg
            )
        )
    return records


def _score_example(
    oracle,
    example: TaskExample,
    config: RunConfig,
    answer: ModalAttribution,
    explanation: ModalAttribution,
    j: int,
) -> tuple[MetricRow, dict | None]:
    """Metric row plus the zero-norm flags, when any modality hit the
    neutral-cosine convention."""
    pair_nlp = pair_img = None
    if answer.language is not None and explanation.language is not None:
        pair_nlp = AttributionPair(answer.language, explanation.language)
    if answer.vision is not None and explanation.vision is not None:
        pair_img = AttributionPair(answer.vision, explanation.vision)
    sf = attribution_similarity(pair_nlp, pair_img)
    flags = None
    if sf.zero_norm_language or sf.zero_norm_vision:
        flags = {
            "language": sf.zero_norm_language,
            "vision": sf.zero_norm_vision,
        }

    suff_nlp = comp_nlp = suff_img = comp_img = None
    kwargs = dict(
        bins=config.bins,
        j=j,
        ranking_mode=config.ranking,
        pad_token_id=oracle.codec.pad_token_id,
    )
    if explanation.language is not None:
        suff_nlp = nle_sufficiency(oracle, example, explanation.language, **kwargs)
        comp_nlp = nle_comprehensiveness(oracle, example, explanation.language, **kwargs)
    if explanation.vision is not None:
        suff_img = nle_sufficiency(oracle, example, explanation.vision, **kwargs)
        comp_img = nle_comprehensiveness(oracle, example, explanation.vision, **kwargs)
    return metric_row(example.id, sf, suff_nlp, comp_nlp, suff_img, comp_img), flags


def _vector_from_record(record: dict) -> AttributionVector:
    return AttributionVector(
        Modality(record["modality"]),
        tuple(int(i) for i in record["feature_ids"]),
        np.asarray(record["values"], dtype=np.float64),
    )


def _modal_from_records(records: list[dict], example_id: str, target: str) -> ModalAttribution | None:
    chosen = [r for r in records if r["id"] == example_id and r["target"] == target]
    if not chosen:
        return None
    language = vision = None
    for record in chosen:
        vector = _vector_from_record(record)
        if vector.modality is Modality.LANGUAGE:
            language = vector
        else:
            vision = vector
    return ModalAttribution(language=language, vision=vision)


# ---------------------------------------------------------------------------
# Sharded execution
# ---------------------------------------------------------------------------


def _run_shard(config: RunConfig, examples: list[TaskExample], mode: str):
    """Worker entry point: builds its own oracle, processes a shard."""
    oracle, close = build_oracle(config)
    ig_config = config.ig_config()
    results = []
    failures = []
    try:
        for example in examples:
            try:
                j, generated, answer, explanation = _attribute_example(oracle, example, ig_config)
                cfg = ig_config.as_dict()
                records = _attribution_records(example.id, answer, "answer", cfg)
                records += _attribution_records(example.id, explanation, "explanation", cfg)
                row, flags = None, None
                if mode == "score":
                    row, flags = _score_example(oracle, example, config, answer, explanation, j)
                results.append((example.id, records, row, flags))
            except FaithevalError as exc:
                failures.append((example.id, f"{type(exc).__name__}: {exc}"))
    finally:
        close()
    return results, failures


def _run_examples(config: RunConfig, examples: list[TaskExample], mode: str):
    jobs = min(config.effective_jobs, len(examples)) or 1
    if jobs == 1:
        return _run_shard(config, examples, mode)
    ordered = sorted(examples, key=lambda e: e.id)
    shards = [ordered[i::jobs] for i in range(jobs)]
    results, failures = [], []
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for shard_results, shard_failures in pool.map(
            _run_shard, [config] * jobs, shards, [mode] * jobs
        ):
            results.extend(shard_results)
            failures.extend(shard_failures)
    return results, failures


def _write_sidecar(config: RunConfig, out: Path, command: str):
    doc = {"command": command, **config.as_dict()}
    (out / "config.json").write_text(
        json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _report_failures(failures, out: Path) -> int:
    if not failures:
        return 0
    lines = [f"{example_id}\t{message}" for example_id, message in sorted(failures)]
    (out / "errors.log").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for line in lines:
        log.error("example failed: %s", line)
    print(f"error: {len(failures)} example(s) failed; see {out / 'errors.log'}", file=sys.stderr)
    return 1


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_attribute(config: RunConfig) -> int:
    examples = load_examples(config.examples)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_sidecar(config, out, "attribute")
    results, failures = _run_examples(config, examples, mode="attribute")
    records = [r for _, example_records, _, _ in sorted(results) for r in example_records]
    write_attributions(records, out / "attributions.jsonl")
    print(f"wrote {len(records)} attribution records for {len(results)} examples")
    return _report_failures(failures, out)


def cmd_score(config: RunConfig) -> int:
    examples = load_examples(config.examples)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_sidecar(config, out, "score")

    attribution_path = out / "attributions.jsonl"
    rows: list[MetricRow] = []
    failures: list[tuple[str, str]] = []
    zero_norm_flags: dict[str, dict] = {}
    if attribution_path.exists():
        stored = load_attributions(str(attribution_path))
        oracle, close = build_oracle(config)
        try:
            if oracle.codec is None:
                raise InvalidInput("this oracle needs --weights to materialize token embeddings")
            for example in examples:
                try:
                    answer = _modal_from_records(stored, example.id, "answer")
                    explanation = _modal_from_records(stored, example.id, "explanation")
                    if answer is None:
                        raise InvalidInput(f"no stored attributions for example {example.id!r}")
                    if explanation is None:
                        # legitimate absence when no modality reaches the
                        # explanation head (answer-only configurations)
                        if _oracle_info(oracle).explanation_modalities:
                            raise InvalidInput(
                                f"no stored explanation attribution for example {example.id!r}"
                            )
                        explanation = ModalAttribution(None, None)
                    j = oracle.predict(oracle.codec.materialize(example)).argmax
                    row, flags = _score_example(oracle, example, config, answer, explanation, j)
                    rows.append(row)
                    if flags:
                        zero_norm_flags[example.id] = flags
                except FaithevalError as exc:
                    failures.append((example.id, f"{type(exc).__name__}: {exc}"))
        finally:
            close()
    else:
        results, failures = _run_examples(config, examples, mode="score")
        ordered = sorted(results)
        rows = [row for _, _, row, _ in ordered if row is not None]
        zero_norm_flags = {example_id: flags for example_id, _, _, flags in ordered if flags}

    sidecar = {
        "m": config.steps,
        "bins": list(config.bins),
        "ranking_mode": config.ranking,
        "baseline": config.ig_config().baseline,
    }
    write_metrics(
        rows, out / "metrics.csv", sidecar=sidecar, extra={"zero_norm_flags": zero_norm_flags}
    )
    print(f"wrote {len(rows)} metric rows to {out / 'metrics.csv'}")
    return _report_failures(failures, out)


def _influence_records(stored: list[dict]) -> list[dict]:
    by_key: dict[tuple[str, str], dict] = {}
    for record in stored:
        key = (record["id"], record["target"])
        entry = by_key.setdefault(
            key, {"id": record["id"], "target": record["target"], "language": None, "vision": None}
        )
        entry[record["modality"]] = float(sum(record["values"]))
    return list(by_key.values())


def _group_influence_table(stored: list[dict], spec: dict) -> dict:
    target = spec.get("target", "explanation")
    modality = spec.get("modality", "language")
    groups = {name: [int(i) for i in ids] for name, ids in spec["groups"].items()}
    per_example = []
    totals: dict[str, float] = {}
    for record in stored:
        if record["target"] != target or record["modality"] != modality:
            continue
        vector = _vector_from_record(record)
        sums = input_group_influence(vector, groups)
        per_example.append({"id": record["id"], **sums})
        for name, value in sums.items():
            totals[name] = totals.get(name, 0.0) + value
    per_example.sort(key=lambda rec: rec["id"])
    return {
        "target": target,
        "modality": modality,
        "per_example": per_example,
        "aggregate": totals,
    }


def cmd_analyze(config: RunConfig, metrics_path: str | None, groups_path: str | None) -> int:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    path = Path(metrics_path) if metrics_path else out / "metrics.csv"
    rows = read_metrics(path)

    influence = []
    stored: list[dict] = []
    attribution_path = out / "attributions.jsonl"
    if attribution_path.exists():
        stored = load_attributions(str(attribution_path))
        influence = _influence_records(stored)

    report = build_report(rows, influence_records=influence)
    if groups_path:
        spec = json.loads(Path(groups_path).read_text(encoding="utf-8"))
        report["influence"]["groups"] = _group_influence_table(stored, spec)

    (out / "report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    from .analysis import ANALYSIS_REPORT_SCHEMA

    (out / "report.schema.json").write_text(
        json.dumps(ANALYSIS_REPORT_SCHEMA, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    _write_analysis_csvs(report, out)
    print(f"wrote analysis report to {out / 'report.json'}")
    return 0


def _write_analysis_csvs(report: dict, out: Path):
    lines = ["metric,bucket,lo,hi,count"]
    for metric in sorted(report["histograms"]):
        h = report["histograms"][metric]
        width = (h["hi"] - h["lo"]) / len(h["counts"])
        for i, count in enumerate(h["counts"]):
            lo = h["lo"] + i * width
            lines.append(f"{metric},{i},{lo!r},{lo + width!r},{count}")
    (out / "histograms.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    names = report["correlation"]["names"]
    lines = ["," + ",".join(names)]
    for name, row in zip(names, report["correlation"]["matrix"]):
        cells = ["" if v is None else repr(v) for v in row]
        lines.append(name + "," + ",".join(cells))
    (out / "correlation.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    lines = ["id,target,language,vision"]
    for entry in report["influence"]["per_example"]:
        lang = "" if entry["language"] is None else repr(entry["language"])
        vis = "" if entry["vision"] is None else repr(entry["vision"])
        lines.append(f"{entry['id']},{entry['target']},{lang},{vis}")
    (out / "influence.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_selftest() -> int:
    results = run_selftest()
    failed = [r for r in results if not r.passed]
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        print(f"{status} {result.name}: {result.detail} [{result.seconds:.2f}s]")
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _add_run_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--examples", required=True, help="examples JSONL file")
    parser.add_argument(
        "--oracle",
        default="builtin:toy",
        help="oracle command line, or builtin:toy(seed=...,ablation=...,encoder=...)",
    )
    parser.add_argument("--weights", help="model weight JSON (required for external oracles)")
    parser.add_argument("--steps", type=int, default=50, help="integration steps m")
    parser.add_argument("--bins", default="0.01,0.05,0.1,0.2,0.5", help="top-k fractions, CSV")
    parser.add_argument("--ranking", choices=("signed", "abs"), default="signed")
    parser.add_argument("--granularity", choices=("region", "feature"), default="region")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--jobs", type=int, default=0, help="parallel workers (0 = cores)")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--timeout", type=float, default=30.0, help="oracle timeout, seconds")


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        examples=args.examples,
        oracle=args.oracle,
        weights=args.weights,
        steps=args.steps,
        bins=parse_bins(args.bins),
        ranking=args.ranking,
        granularity=args.granularity,
        out=args.out,
        jobs=args.jobs,
        seed=args.seed,
        timeout=args.timeout,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="faitheval",
        description="Faithfulness metrics for natural-language explanations.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_attr = sub.add_parser("attribute", help="compute answer/explanation attributions")
    _add_run_arguments(p_attr)

    p_score = sub.add_parser("score", help="compute per-example metric rows")
    _add_run_arguments(p_score)

    p_analyze = sub.add_parser("analyze", help="histograms, correlations, influence")
    p_analyze.add_argument("--out", default="out", help="run directory to analyze")
    p_analyze.add_argument("--metrics", help="metrics CSV (default: <out>/metrics.csv)")
    p_analyze.add_argument("--groups", help="JSON file naming feature-id groups")

    sub.add_parser("selftest", help="run the built-in verification suites")
    return parser


def main(argv: list[str] | None = None) -> int:
    level = getattr(logging, os.environ.get("FAITHEVAL_LOG", "WARNING").upper(), None)
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "attribute":
            return cmd_attribute(_config_from_args(args))
        if args.command == "score":
            return cmd_score(_config_from_args(args))
        if args.command == "analyze":
            dummy = RunConfig(examples="-", oracle="builtin:toy", out=args.out)
            return cmd_analyze(dummy, args.metrics, args.groups)
        if args.command == "selftest":
            return cmd_selftest()
        parser.error(f"unknown command {args.command!r}")
    except (InvalidInput, IngestError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OracleError as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
