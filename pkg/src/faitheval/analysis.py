"""Dataset-level statistics over metric rows and attributions.

Score histograms (20 equal-width buckets by default), the Pearson
correlation matrix among metric columns, and signed attribution totals per
modality or per named feature group.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .attribution import ModalAttribution
from .core import METRIC_COLUMNS, AttributionVector, MetricRow
from .errors import InvalidInput

#: Marker for correlation entries that are undefined because a column has no
#: variance (or too few paired observations); serialized as JSON null.
NO_VARIANCE = None


@dataclass(frozen=True)
class Histogram:
    lo: float
    hi: float
    counts: tuple[int, ...]

    def __post_init__(self):
        if self.hi <= self.lo:
            raise InvalidInput("histogram range must be non-empty")
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))

    @property
    def n_buckets(self) -> int:
        return len(self.counts)

    @property
    def edges(self) -> tuple[float, ...]:
        width = (self.hi - self.lo) / self.n_buckets
        return tuple(self.lo + i * width for i in range(self.n_buckets + 1))

    @property
    def total(self) -> int:
        return sum(self.counts)


def histogram(
    scores: Sequence[float], n_buckets: int = 20, lo: float = 0.0, hi: float = 1.0
) -> Histogram:
    """Equal-width bucket counts; buckets are right-open except the last.

    Out-of-range values land in the nearest end bucket so the counts always
    conserve the sample size.
    """
    if n_buckets < 1:
        raise InvalidInput("need at least one bucket")
    if hi <= lo:
        raise InvalidInput("histogram range must be non-empty")
    counts = [0] * n_buckets
    width = (hi - lo) / n_buckets
    for score in scores:
        if not math.isfinite(score):
            raise InvalidInput(f"scores must be finite, got {score!r}")
        index = int(math.floor((score - lo) / width))
        index = max(0, min(n_buckets - 1, index))
        counts[index] += 1
    return Histogram(lo, hi, tuple(counts))


@dataclass(frozen=True)
class CorrelationMatrix:
    names: tuple[str, ...]
    values: tuple[tuple[float | None, ...], ...]

    def __post_init__(self):
        n = len(self.names)
        if len(self.values) != n or any(len(row) != n for row in self.values):
            raise InvalidInput("correlation matrix must be square over the metric names")
        for i in range(n):
            for k in range(n):
                v = self.values[i][k]
                if v is not None and not -1 - 1e-9 <= v <= 1 + 1e-9:
                    raise InvalidInput(f"correlation entry out of range: {v!r}")
                if self.values[i][k] != self.values[k][i]:
                    raise InvalidInput("correlation matrix must be symmetric")

    def entry(self, a: str, b: str) -> float | None:
        return self.values[self.names.index(a)][self.names.index(b)]


def _pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    da = a - a.mean()
    db = b - b.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        return NO_VARIANCE
    r = float(da @ db) / denom
    return max(-1.0, min(1.0, r))


def pearson_matrix(
    rows: Sequence[MetricRow], columns: Sequence[str] | None = None
) -> CorrelationMatrix:
    """Pairwise Pearson r over metric columns, on pairwise-complete rows.

    Columns that are constant (or have fewer than two paired observations)
    yield the distinguished no-variance marker rather than NaN.
    """
    if len(rows) < 2:
        raise InvalidInput("correlation needs at least two rows")
    if columns is None:
        columns = [
            c for c in METRIC_COLUMNS if any(getattr(r, c) is not None for r in rows)
        ]
    for c in columns:
        if c not in METRIC_COLUMNS:
            raise InvalidInput(f"unknown metric column {c!r}")
    series = {c: [getattr(r, c) for r in rows] for c in columns}
    n = len(columns)
    values: list[list[float | None]] = [[NO_VARIANCE] * n for _ in range(n)]
    for i in range(n):
        for k in range(i, n):
            paired = [
                (x, y)
                for x, y in zip(series[columns[i]], series[columns[k]])
                if x is not None and y is not None
            ]
            if len(paired) < 2:
                r = NO_VARIANCE
            else:
                xs = np.asarray([p[0] for p in paired], dtype=np.float64)
                ys = np.asarray([p[1] for p in paired], dtype=np.float64)
                if i == k:
                    # exact unit diagonal whenever the column varies at all
                    r = NO_VARIANCE if float(np.ptp(xs)) == 0.0 else 1.0
                else:
                    r = _pearson(xs, ys)
            values[i][k] = r
            values[k][i] = r
    return CorrelationMatrix(tuple(columns), tuple(tuple(row) for row in values))


def modality_influence(attrib: ModalAttribution) -> dict[str, float | None]:
    """Signed sum of all attributions per modality; None for absent modalities."""
    return {
        "language": None if attrib.language is None else attrib.language.total(),
        "vision": None if attrib.vision is None else attrib.vision.total(),
    }


def input_group_influence(
    attrib: AttributionVector, groups: Mapping[str, Iterable[int]]
) -> dict[str, float]:
    """Signed attribution sum per named feature-id group, plus an ``other``
    residual for ids no group covers.  Groups must not overlap."""
    if "other" in groups:
        raise InvalidInput("'other' is reserved for the residual group")
    resolved: dict[str, set[int]] = {name: set(ids) for name, ids in groups.items()}
    claimed: set[int] = set()
    for name, ids in resolved.items():
        overlap = claimed & ids
        if overlap:
            raise InvalidInput(f"group {name!r} overlaps another group on ids {sorted(overlap)}")
        claimed |= ids
    known = set(attrib.feature_ids)
    unknown = claimed - known
    if unknown:
        raise InvalidInput(f"groups reference unknown feature ids {sorted(unknown)}")
    totals = {name: 0.0 for name in resolved}
    other = 0.0
    for fid, value in zip(attrib.feature_ids, attrib.values.tolist()):
        for name, ids in resolved.items():
            if fid in ids:
                totals[name] += value
                break
        else:
            other += value
    totals["other"] = other
    return totals


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------

SF_RANGE = (0.0, 1.0)
AOPC_RANGE = (-1.0, 1.0)

ANALYSIS_REPORT_SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "faitheval analysis report",
    "type": "object",
    "required": ["histograms", "correlation", "influence"],
    "additionalProperties": False,
    "properties": {
        "histograms": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["lo", "hi", "counts"],
                "additionalProperties": False,
                "properties": {
                    "lo": {"type": "number"},
                    "hi": {"type": "number"},
                    "counts": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                },
            },
        },
        "correlation": {
            "type": "object",
            "required": ["names", "matrix"],
            "additionalProperties": False,
            "properties": {
                "names": {"type": "array", "items": {"type": "string"}},
                "matrix": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "items": {"type": ["number", "null"]},
                    },
                },
            },
        },
        "influence": {
            "type": "object",
            "required": ["per_example", "aggregate"],
            "additionalProperties": False,
            "properties": {
                "per_example": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["id", "target", "language", "vision"],
                        "additionalProperties": True,
                        "properties": {
                            "id": {"type": "string"},
                            "target": {"enum": ["answer", "explanation"]},
                            "language": {"type": ["number", "null"]},
                            "vision": {"type": ["number", "null"]},
                        },
                    },
                },
                "aggregate": {
                    "type": "object",
                    "additionalProperties": {
                        "type": "object",
                        "additionalProperties": {"type": ["number", "null"]},
                    },
                },
            },
        },
    },
}


def _histogram_range(column: str) -> tuple[float, float]:
    if column.startswith("sf_"):
        return SF_RANGE
    return AOPC_RANGE


def build_report(
    rows: Sequence[MetricRow],
    influence_records: Sequence[dict] | None = None,
    n_buckets: int = 20,
) -> dict:
    """Assemble the analysis report document (validated by the published schema).

    ``influence_records`` are per-example dicts with keys id/target/language/
    vision, typically derived from stored attribution files; influence series
    are emitted sorted by example id.
    """
    histograms = {}
    for column in METRIC_COLUMNS:
        values = [getattr(r, column) for r in rows if getattr(r, column) is not None]
        if not values:
            continue
        lo, hi = _histogram_range(column)
        h = histogram(values, n_buckets=n_buckets, lo=lo, hi=hi)
        histograms[column] = {"lo": h.lo, "hi": h.hi, "counts": list(h.counts)}

    matrix = pearson_matrix(rows) if len(rows) >= 2 else None
    correlation = {
        "names": list(matrix.names) if matrix else [],
        "matrix": [list(row) for row in matrix.values] if matrix else [],
    }

    per_example = sorted(
        influence_records or [], key=lambda rec: (rec["id"], rec["target"])
    )
    aggregate: dict[str, dict[str, float | None]] = {}
    for target in ("answer", "explanation"):
        entries = [rec for rec in per_example if rec["target"] == target]
        if not entries:
            continue
        agg: dict[str, float | None] = {}
        for modality in ("language", "vision"):
            values = [rec[modality] for rec in entries if rec[modality] is not None]
            agg[f"{modality}_mean"] = float(np.mean(values)) if values else None
            agg[f"{modality}_total"] = float(np.sum(values)) if values else None
        aggregate[target] = agg

    return {
        "histograms": histograms,
        "correlation": correlation,
        "influence": {"per_example": list(per_example), "aggregate": aggregate},
    }
