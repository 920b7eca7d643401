"""Boundary to models and data: oracle protocol, file ingestion, persistence.

An *oracle* is anything exposing deterministic ``predict`` and ``gradient``
operations over explicit feature payloads.  In-process toy models satisfy the
same interface as :class:`OracleSession`, which drives an external process
over newline-delimited JSON on stdin/stdout.

Wire protocol (one JSON object per line, UTF-8, LF):

    request:  {"id": N, "op": "info" | "predict" | "gradient",
               "payload": {"text_embeddings": [[...]] | null,
                           "visual_features": [[...]] | null,
                           "answer_class": int?, "explanation_tokens": [int]?},
               "target": class_index | [step, token_id]}        (gradient only)
    response: {"id": N, "classes": C, "vis_dims": [R, d_vis], "vocab": V,
               "text_dims": [T, d]}                              (info)
              {"id": N, "probs": [...]}                          (predict)
              {"id": N, "grads": {"text_embeddings": ..., "visual_features": ...}}
              {"id": N, "error": "message"}

The toolkit applies perturbations and path interpolation itself and sends
fully materialized feature values, so oracles stay stateless.  Dimensions in
the info handshake may be -1 to accept variable sizes.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import shlex
import subprocess
import threading
import queue
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import (
    METRIC_COLUMNS,
    MetricRow,
    Modality,
    PredictionDistribution,
    TaskExample,
    Token,
)
from .errors import IngestError, InvalidInput, OracleError, OracleTimeout, ProtocolError

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Payload and response types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelInputs:
    """Fully materialized model inputs: embedded text and raw visual features."""

    text_embeddings: np.ndarray | None = None
    visual_features: np.ndarray | None = None
    answer_class: int | None = None
    explanation_tokens: tuple[int, ...] | None = None

    def __post_init__(self):
        for name in ("text_embeddings", "visual_features"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=np.float64)
                if arr.ndim != 2:
                    raise InvalidInput(f"{name} must be a 2-d matrix, got shape {arr.shape}")
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)
        if self.text_embeddings is None and self.visual_features is None:
            raise InvalidInput("model inputs need at least one modality")
        if self.explanation_tokens is not None:
            object.__setattr__(
                self, "explanation_tokens", tuple(int(t) for t in self.explanation_tokens)
            )

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        if self.text_embeddings is not None:
            out["text_embeddings"] = self.text_embeddings
        if self.visual_features is not None:
            out["visual_features"] = self.visual_features
        return out

    def replace_arrays(self, arrays: dict[str, np.ndarray]) -> "ModelInputs":
        return ModelInputs(
            text_embeddings=arrays.get("text_embeddings", None),
            visual_features=arrays.get("visual_features", None),
            answer_class=self.answer_class,
            explanation_tokens=self.explanation_tokens,
        )


@dataclass(frozen=True)
class AnswerTarget:
    """Differentiate the logit of one answer class."""

    class_index: int


@dataclass(frozen=True)
class ExplanationTarget:
    """Differentiate the logit of ``token_id`` at generation step ``step``.

    The prefix for the step is ``explanation_tokens[:step]`` from the payload.
    """

    step: int
    token_id: int


Target = AnswerTarget | ExplanationTarget


@dataclass(frozen=True)
class GradientRecord:
    """Partial derivatives of one scalar output w.r.t. every input feature."""

    text: np.ndarray | None = None
    vision: np.ndarray | None = None

    def __post_init__(self):
        for name in ("text", "vision"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=np.float64)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class OracleInfo:
    """Declared oracle dimensions; -1 marks a dimension accepting any size."""

    classes: int
    vis_dims: tuple[int, int] = (-1, -1)
    vocab: int = -1
    text_dims: tuple[int, int] = (-1, -1)
    explanation_modalities: tuple[str, ...] = ("language", "vision")


class InputCodec:
    """Turns token-level examples into embedding-space payloads.

    Holds the embedding table shared with the oracle (via the model weight
    file) plus the PAD token id used for language baselines.
    """

    def __init__(self, embedding_table: np.ndarray, pad_token_id: int = 0):
        self.embedding_table = np.asarray(embedding_table, dtype=np.float64)
        if self.embedding_table.ndim != 2:
            raise InvalidInput("embedding table must be [vocab x d]")
        if not 0 <= pad_token_id < self.embedding_table.shape[0]:
            raise InvalidInput(f"pad token id {pad_token_id} outside vocabulary")
        self.pad_token_id = pad_token_id

    @property
    def vocab(self) -> int:
        return self.embedding_table.shape[0]

    @property
    def embedding_dim(self) -> int:
        return self.embedding_table.shape[1]

    def embed(self, token_ids: Sequence[int]) -> np.ndarray:
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab):
            raise InvalidInput(f"token id outside vocabulary of size {self.vocab}")
        return self.embedding_table[ids]

    def materialize(
        self,
        example: TaskExample,
        answer_class: int | None = None,
        explanation_tokens: Sequence[int] | None = None,
    ) -> ModelInputs:
        if explanation_tokens is None:
            explanation_tokens = example.explanation_tokens
        return ModelInputs(
            text_embeddings=self.embed(example.token_ids),
            visual_features=example.visual_features,
            answer_class=answer_class,
            explanation_tokens=tuple(explanation_tokens) if explanation_tokens else None,
        )

    def baseline_for(self, inputs: ModelInputs) -> ModelInputs:
        """PAD embedding at every text position, zeros for visual features."""
        text = None
        if inputs.text_embeddings is not None:
            pad_row = self.embedding_table[self.pad_token_id]
            text = np.tile(pad_row, (inputs.text_embeddings.shape[0], 1))
        vis = None
        if inputs.visual_features is not None:
            vis = np.zeros_like(inputs.visual_features)
        return ModelInputs(
            text_embeddings=text,
            visual_features=vis,
            answer_class=inputs.answer_class,
            explanation_tokens=inputs.explanation_tokens,
        )


# ---------------------------------------------------------------------------
# External oracle session (newline-delimited JSON over a child process)
# ---------------------------------------------------------------------------


def _encode_payload(inputs: ModelInputs) -> dict:
    payload: dict = {
        "text_embeddings": None
        if inputs.text_embeddings is None
        else inputs.text_embeddings.tolist(),
        "visual_features": None
        if inputs.visual_features is None
        else inputs.visual_features.tolist(),
    }
    if inputs.answer_class is not None:
        payload["answer_class"] = inputs.answer_class
    if inputs.explanation_tokens is not None:
        payload["explanation_tokens"] = list(inputs.explanation_tokens)
    return payload


def _encode_target(target: Target):
    if isinstance(target, AnswerTarget):
        return target.class_index
    return [target.step, target.token_id]


class OracleSession:
    """One oracle connection, one in-flight request at a time.

    The default transport spawns a child process from ``command`` (a
    shell-style string or argv list) and frames messages over its
    stdin/stdout; :meth:`connect_tcp` speaks the identical framing to an
    already-running oracle over a socket.  Either way the session completes
    the ``info`` handshake before serving predictions.
    """

    def __init__(
        self,
        command: str | Sequence[str] | None = None,
        timeout: float = 30.0,
        codec: InputCodec | None = None,
        _transport=None,
    ):
        if (command is None) == (_transport is None):
            raise InvalidInput("session needs either an oracle command or a transport")
        self.timeout = timeout
        self.codec = codec
        self._next_id = 1
        self._bytes_read = 0
        self._lock = threading.Lock()
        self._proc = None
        self._sock = None
        if command is not None:
            argv = shlex.split(command) if isinstance(command, str) else list(command)
            self.command = argv
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=False,
            )
            self._write_stream = self._proc.stdin
            self._read_stream = self._proc.stdout
        else:
            self.command = None
            self._sock, self._write_stream, self._read_stream = _transport
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        self.info = self._handshake()

    @classmethod
    def connect_tcp(
        cls,
        host: str,
        port: int,
        timeout: float = 30.0,
        codec: InputCodec | None = None,
    ) -> "OracleSession":
        """Connect to an oracle serving the same line framing over TCP."""
        import socket

        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise OracleError(f"cannot connect to oracle at {host}:{port}: {exc}") from exc
        transport = (sock, sock.makefile("wb"), sock.makefile("rb"))
        return cls(timeout=timeout, codec=codec, _transport=transport)

    # -- transport -------------------------------------------------------

    def _read_loop(self):
        try:
            for raw in self._read_stream:
                self._lines.put(raw)
        except (OSError, ValueError):
            pass
        self._lines.put(None)

    def _roundtrip(self, request: dict) -> dict:
        with self._lock:
            request_id = self._next_id
            self._next_id += 1
            request = {"id": request_id, **request}
            line = json.dumps(request, sort_keys=True) + "\n"
            try:
                self._write_stream.write(line.encode("utf-8"))
                self._write_stream.flush()
            except (BrokenPipeError, OSError, ValueError) as exc:
                raise OracleError(f"oracle connection is gone: {exc}") from exc
            try:
                raw = self._lines.get(timeout=self.timeout)
            except queue.Empty:
                raise OracleTimeout(
                    f"no response within {self.timeout}s for request {request_id}"
                ) from None
            if raw is None:
                raise ProtocolError("oracle closed stdout", byte_offset=self._bytes_read)
            offset = self._bytes_read
            self._bytes_read += len(raw)
            try:
                response = json.loads(raw.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise ProtocolError(f"malformed response line: {exc}", byte_offset=offset)
            if not isinstance(response, dict):
                raise ProtocolError("response must be a JSON object", byte_offset=offset)
            if response.get("id") != request_id:
                raise ProtocolError(
                    f"response id {response.get('id')!r} does not match request id {request_id}",
                    byte_offset=offset,
                )
            if "error" in response:
                raise OracleError(f"oracle error: {response['error']}")
            return response

    def close(self):
        if self._proc is not None:
            if self._proc.poll() is None:
                try:
                    self._proc.stdin.close()
                except OSError:
                    pass
                try:
                    self._proc.wait(timeout=3)
                except subprocess.TimeoutExpired:
                    self._proc.kill()
        elif self._sock is not None:
            try:
                self._write_stream.close()
                self._sock.close()
            except OSError:
                pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- operations --------------------------------------------------------

    def _handshake(self) -> OracleInfo:
        response = self._roundtrip({"op": "info"})
        try:
            return OracleInfo(
                classes=int(response["classes"]),
                vis_dims=tuple(int(v) for v in response.get("vis_dims", (-1, -1))),
                vocab=int(response.get("vocab", -1)),
                text_dims=tuple(int(v) for v in response.get("text_dims", (-1, -1))),
                explanation_modalities=tuple(
                    response.get("explanation_modalities", ("language", "vision"))
                ),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"invalid info response: {exc}")

    def _check_dims(self, inputs: ModelInputs):
        if inputs.text_embeddings is not None:
            self._check_shape("text", inputs.text_embeddings.shape, self.info.text_dims)
        if inputs.visual_features is not None:
            self._check_shape("vision", inputs.visual_features.shape, self.info.vis_dims)

    @staticmethod
    def _check_shape(name: str, shape: tuple[int, int], declared: tuple[int, int]):
        for got, want in zip(shape, declared):
            if want >= 0 and got != want:
                raise InvalidInput(f"{name} payload shape {shape} does not match declared {declared}")

    def predict(self, inputs: ModelInputs) -> PredictionDistribution:
        self._check_dims(inputs)
        response = self._roundtrip({"op": "predict", "payload": _encode_payload(inputs)})
        if "probs" not in response:
            raise ProtocolError("predict response missing 'probs'")
        try:
            return PredictionDistribution(np.asarray(response["probs"], dtype=np.float64))
        except (InvalidInput, ValueError) as exc:
            raise ProtocolError(f"invalid probs in response: {exc}")

    def gradient(self, inputs: ModelInputs, target: Target) -> GradientRecord:
        self._check_dims(inputs)
        response = self._roundtrip(
            {
                "op": "gradient",
                "payload": _encode_payload(inputs),
                "target": _encode_target(target),
            }
        )
        grads = response.get("grads")
        if not isinstance(grads, dict):
            raise ProtocolError("gradient response missing 'grads' object")
        record = GradientRecord(
            text=None
            if grads.get("text_embeddings") is None
            else np.asarray(grads["text_embeddings"], dtype=np.float64),
            vision=None
            if grads.get("visual_features") is None
            else np.asarray(grads["visual_features"], dtype=np.float64),
        )
        for got, want, name in (
            (record.text, inputs.text_embeddings, "text"),
            (record.vision, inputs.visual_features, "vision"),
        ):
            if (got is None) != (want is None):
                raise ProtocolError(f"gradient response {name} presence does not match payload")
            if got is not None and got.shape != want.shape:
                raise ProtocolError(
                    f"gradient response {name} shape {got.shape} does not match payload {want.shape}"
                )
        return record


# ---------------------------------------------------------------------------
# Example and attribution files
# ---------------------------------------------------------------------------

EXAMPLE_REQUIRED_FIELDS = ("id", "words", "tokens", "answer_class")


def _parse_example(record: dict, line: int) -> TaskExample:
    for field_name in EXAMPLE_REQUIRED_FIELDS:
        if field_name not in record:
            raise IngestError(f"missing field {field_name!r}", line)
    try:
        tokens = tuple(
            Token(id=int(t["id"]), text=str(t.get("text", "")), word_index=int(t["word_index"]))
            for t in record["tokens"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise IngestError(f"bad token object: {exc}", line)
    vf = record.get("visual_features")
    visual = None
    if vf:
        try:
            visual = np.asarray(vf, dtype=np.float64)
        except ValueError as exc:
            raise IngestError(f"bad visual_features: {exc}", line)
    expl = record.get("explanation_tokens")
    try:
        return TaskExample(
            id=str(record["id"]),
            words=tuple(str(w) for w in record["words"]),
            tokens=tokens,
            visual_features=visual,
            answer_class=int(record["answer_class"]),
            explanation_tokens=tuple(int(t) for t in expl) if expl else None,
        )
    except (InvalidInput, TypeError, ValueError) as exc:
        raise IngestError(str(exc), line)


def example_to_record(example: TaskExample) -> dict:
    record = {
        "id": example.id,
        "words": list(example.words),
        "tokens": [{"id": t.id, "text": t.text, "word_index": t.word_index} for t in example.tokens],
        "visual_features": None
        if example.visual_features is None
        else example.visual_features.tolist(),
        "answer_class": example.answer_class,
    }
    if example.explanation_tokens is not None:
        record["explanation_tokens"] = list(example.explanation_tokens)
    return record


def _read_jsonl(path: str | Path):
    path = Path(path)
    if not path.exists():
        raise IngestError(f"no such file: {path}")
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                yield lineno, json.loads(raw)
            except json.JSONDecodeError as exc:
                raise IngestError(f"invalid JSON: {exc}", lineno)


def load_examples(path: str | Path) -> list[TaskExample]:
    examples = []
    seen: set[str] = set()
    for lineno, record in _read_jsonl(path):
        example = _parse_example(record, lineno)
        if example.id in seen:
            raise IngestError(f"duplicate example id {example.id!r}", lineno)
        seen.add(example.id)
        examples.append(example)
    return examples


def write_examples(examples: Iterable[TaskExample], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for example in examples:
            fh.write(json.dumps(example_to_record(example), sort_keys=True) + "\n")


def attribution_to_record(
    example_id: str,
    target: str,
    modality: Modality,
    feature_ids: Sequence[int],
    values: Sequence[float],
    config: dict,
) -> dict:
    return {
        "id": example_id,
        "target": target,
        "modality": Modality(modality).value,
        "feature_ids": list(feature_ids),
        "values": [float(v) for v in values],
        "config": config,
    }


def load_attributions(path: str | Path) -> list[dict]:
    records = []
    for lineno, record in _read_jsonl(path):
        for field_name in ("id", "target", "modality", "feature_ids", "values"):
            if field_name not in record:
                raise IngestError(f"missing field {field_name!r}", lineno)
        if record["target"] not in ("answer", "explanation"):
            raise IngestError(f"bad target {record['target']!r}", lineno)
        if record["modality"] not in (m.value for m in Modality):
            raise IngestError(f"bad modality {record['modality']!r}", lineno)
        if len(record["feature_ids"]) != len(record["values"]):
            raise IngestError("feature_ids and values length mismatch", lineno)
        if not all(math.isfinite(v) for v in record["values"]):
            raise IngestError("attribution values must be finite", lineno)
        records.append(record)
    return records


def write_attributions(records: Iterable[dict], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Metric persistence
# ---------------------------------------------------------------------------


def format_float(value: float) -> str:
    """Decimal serialization with 17 significant digits (round-trip exact)."""
    return format(float(value), ".17g")


def write_metrics(
    rows: Sequence[MetricRow],
    path: str | Path,
    sidecar: dict | None = None,
    extra: dict | None = None,
) -> None:
    """Write the per-example metrics CSV plus its JSON sidecar.

    Output is byte-deterministic for identical inputs: rows sorted by id,
    floats rendered with 17 significant digits.  ``extra`` adds top-level
    keys to the sidecar (e.g. per-example zero-norm flags).
    """
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("id",) + METRIC_COLUMNS)
    for row in sorted(rows, key=lambda r: r.example_id):
        writer.writerow(
            [row.example_id]
            + ["" if getattr(row, c) is None else format_float(getattr(row, c)) for c in METRIC_COLUMNS]
        )
    path.write_text(buf.getvalue(), encoding="utf-8")
    if sidecar is not None:
        aggregate = aggregate_metrics(rows)
        doc = {"config": sidecar, "aggregate": aggregate, "rows": len(rows), **(extra or {})}
        path.with_suffix(".json").write_text(
            json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )


def aggregate_metrics(rows: Sequence[MetricRow]) -> dict:
    """Mean and population standard deviation per metric over present values."""
    out: dict = {}
    for column in METRIC_COLUMNS:
        values = [getattr(r, column) for r in rows if getattr(r, column) is not None]
        if not values:
            out[column] = {"mean": None, "std": None, "n": 0}
            continue
        arr = np.asarray(values, dtype=np.float64)
        out[column] = {"mean": float(arr.mean()), "std": float(arr.std()), "n": len(values)}
    return out


def read_metrics(path: str | Path) -> list[MetricRow]:
    path = Path(path)
    if not path.exists():
        raise IngestError(f"no such file: {path}")
    rows = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["id", *METRIC_COLUMNS]
        if reader.fieldnames != expected:
            raise IngestError(f"unexpected metrics header {reader.fieldnames}", 1)
        for lineno, record in enumerate(reader, start=2):
            try:
                kwargs = {
                    c: (None if record[c] == "" else float(record[c])) for c in METRIC_COLUMNS
                }
                rows.append(MetricRow(example_id=record["id"], **kwargs))
            except (InvalidInput, TypeError, ValueError) as exc:
                raise IngestError(str(exc), lineno)
    return rows
