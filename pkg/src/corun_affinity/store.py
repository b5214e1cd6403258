"""The directional affinity matrix: build, query, persist and render."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import statistics
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import (
    CorruptEntry,
    FormatVersionMismatch,
    InsufficientSamples,
    MissingBaseline,
    StoreError,
)
from .harness import BaselineProfile, PairObservation
from .metrics import (
    AffinityClass,
    ClassificationThresholds,
    classify,
    confidence_interval,
    loss_percent,
    normalize_scores,
    pair_metrics,
)
from .model import PairKey, WorkloadSet, WorkloadSpec, validate_workload_set

MATRIX_FORMAT_VERSION = 1
CELL_DUMP_COLUMNS = ("first_id", "second_id", "loss_first", "loss_second", "average", "distance", "class")


@dataclass(frozen=True)
class AffinityEntry:
    key: PairKey
    loss_first: float
    loss_second: float
    average: float
    distance: float
    classification: AffinityClass
    sample_count: int
    ci_first: tuple[float, float]
    ci_second: tuple[float, float]
    provenance: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "first": self.key.first,
            "second": self.key.second,
            "loss_first": self.loss_first,
            "loss_second": self.loss_second,
            "average": self.average,
            "distance": self.distance,
            "classification": self.classification.value,
            "sample_count": self.sample_count,
            "ci_first": list(self.ci_first),
            "ci_second": list(self.ci_second),
            "provenance": self.provenance,
        }


class Orientation(str, Enum):
    FORWARD = "forward"
    REVERSED = "reversed"


@dataclass(frozen=True)
class AffinityMatrix:
    workloads: WorkloadSet
    entries: Mapping[PairKey, AffinityEntry]
    thresholds: ClassificationThresholds = field(default_factory=ClassificationThresholds)
    created_at: str = ""
    format_version: int = MATRIX_FORMAT_VERSION

    def __post_init__(self) -> None:
        for key in self.entries:
            for wid in key:
                if wid not in self.workloads:
                    raise StoreError(f"entry {key} references unknown workload {wid!r}")
        ordered = dict(sorted(self.entries.items()))
        object.__setattr__(self, "entries", ordered)

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, key: PairKey) -> AffinityEntry | None:
        return self.entries.get(PairKey(*key))

    def lookup_either(self, key: PairKey) -> tuple[AffinityEntry, Orientation] | None:
        key = PairKey(*key)
        entry = self.entries.get(key)
        if entry is not None:
            return entry, Orientation.FORWARD
        entry = self.entries.get(key.reversed())
        if entry is not None:
            return entry, Orientation.REVERSED
        return None

    def reclassify(self, thresholds: ClassificationThresholds) -> "AffinityMatrix":
        entries = {
            k: replace(e, classification=classify(pair_metrics(e.loss_first, e.loss_second), thresholds))
            for k, e in self.entries.items()
        }
        return replace(self, entries=entries, thresholds=thresholds)


def lookup(matrix: AffinityMatrix, key: PairKey) -> AffinityEntry | None:
    return matrix.lookup(key)


def lookup_either(matrix: AffinityMatrix, key: PairKey) -> tuple[AffinityEntry, Orientation] | None:
    return matrix.lookup_either(key)


def _side_stats(samples, baseline: BaselineProfile) -> tuple[float, tuple[float, float]]:
    durations = [s.duration for s in samples]
    loss = loss_percent(baseline.mean, statistics.fmean(durations))
    per_round = [loss_percent(baseline.mean, d) for d in durations]
    return loss, confidence_interval(per_round, 0.95)


def build_entry(
    obs: PairObservation,
    baselines: Mapping[str, BaselineProfile],
    thresholds: ClassificationThresholds,
    provenance: str = "",
) -> AffinityEntry:
    for wid in obs.key:
        if wid not in baselines:
            raise MissingBaseline(wid)
    count = len(obs.samples_first)
    if count < 2 or len(obs.samples_second) < 2:
        raise InsufficientSamples(f"pair {obs.key}", count)
    loss_a, ci_a = _side_stats(obs.samples_first, baselines[obs.key.first])
    loss_b, ci_b = _side_stats(obs.samples_second, baselines[obs.key.second])
    metrics = pair_metrics(loss_a, loss_b)
    return AffinityEntry(
        key=obs.key,
        loss_first=metrics.loss_first,
        loss_second=metrics.loss_second,
        average=metrics.average,
        distance=metrics.distance,
        classification=classify(metrics, thresholds),
        sample_count=count,
        ci_first=ci_a,
        ci_second=ci_b,
        provenance=provenance,
    )


def build_matrix(
    baselines: Mapping[str, BaselineProfile],
    observations: Mapping[PairKey, PairObservation],
    thresholds: ClassificationThresholds | None = None,
    *,
    workloads: WorkloadSet | Iterable[WorkloadSpec] | None = None,
    provenance: str = "",
    created_at: str | None = None,
) -> AffinityMatrix:
    """Turn raw campaign data into an affinity matrix.

    ``workloads`` defaults to placeholder specs for every id seen in the
    observations. ``created_at`` defaults to the latest sample wall time so
    that rebuilding from the same data is reproducible.
    """
    thresholds = thresholds or ClassificationThresholds()
    entries = {
        PairKey(*key): build_entry(obs, baselines, thresholds, provenance)
        for key, obs in sorted(observations.items())
    }
    if workloads is None:
        ids = sorted({wid for key in entries for wid in key})
        workloads = WorkloadSet(WorkloadSpec(id=wid, command=("true",)) for wid in ids)
    elif not isinstance(workloads, WorkloadSet):
        workloads = validate_workload_set(list(workloads))
    if created_at is None:
        stamps = [
            s.wall_time
            for obs in observations.values()
            for s in obs.samples_first + obs.samples_second
            if s.wall_time
        ]
        created_at = max(stamps, default="")
    return AffinityMatrix(workloads, entries, thresholds, created_at)


# -- persistence ----------------------------------------------------------------


def matrix_to_dict(matrix: AffinityMatrix) -> dict[str, Any]:
    return {
        "format_version": matrix.format_version,
        "created_at": matrix.created_at,
        "thresholds": matrix.thresholds.to_dict(),
        "workloads": matrix.workloads.to_list(),
        "entries": [entry.to_dict() for entry in matrix.entries.values()],
    }


def dumps_matrix(matrix: AffinityMatrix) -> str:
    return json.dumps(matrix_to_dict(matrix), indent=2, allow_nan=False) + "\n"


def save_matrix(matrix: AffinityMatrix, path: str | os.PathLike[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps_matrix(matrix), encoding="utf-8")
    os.replace(tmp, path)


def _pair(raw: Any) -> tuple[float, float]:
    lo, hi = raw
    return (float(lo), float(hi))


def _entry_from_dict(raw: Mapping[str, Any], thresholds: ClassificationThresholds) -> AffinityEntry:
    key = PairKey(str(raw.get("first")), str(raw.get("second")))
    try:
        entry = AffinityEntry(
            key=key,
            loss_first=float(raw["loss_first"]),
            loss_second=float(raw["loss_second"]),
            average=float(raw["average"]),
            distance=float(raw["distance"]),
            classification=AffinityClass(raw["classification"]),
            sample_count=int(raw["sample_count"]),
            ci_first=_pair(raw["ci_first"]),
            ci_second=_pair(raw["ci_second"]),
            provenance=str(raw.get("provenance", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptEntry(key, f"malformed entry ({exc})") from None
    expected = pair_metrics(entry.loss_first, entry.loss_second)
    if entry.average != expected.average:
        raise CorruptEntry(key, f"average {entry.average} != {expected.average}")
    if entry.distance != expected.distance:
        raise CorruptEntry(key, f"distance {entry.distance} != {expected.distance}")
    if entry.classification is not classify(expected, thresholds):
        raise CorruptEntry(key, f"classification {entry.classification.value} disagrees with thresholds")
    if entry.sample_count < 2:
        raise CorruptEntry(key, "sample_count must be >= 2")
    if not all(math.isfinite(v) for v in (entry.loss_first, entry.loss_second)):
        raise CorruptEntry(key, "non-finite loss")
    return entry


def matrix_from_dict(doc: Mapping[str, Any]) -> AffinityMatrix:
    if not isinstance(doc, Mapping):
        raise StoreError("matrix document must be a JSON object")
    version = doc.get("format_version")
    if version != MATRIX_FORMAT_VERSION:
        raise FormatVersionMismatch(version, MATRIX_FORMAT_VERSION)
    try:
        thresholds = ClassificationThresholds.from_dict(doc["thresholds"])
        workloads = validate_workload_set([WorkloadSpec.from_dict(w) for w in doc["workloads"]])
        raw_entries = doc["entries"]
    except (KeyError, TypeError, ValueError) as exc:
        raise StoreError(f"malformed matrix document: {exc}") from None
    entries: dict[PairKey, AffinityEntry] = {}
    for raw in raw_entries:
        entry = _entry_from_dict(raw, thresholds)
        if entry.key in entries:
            raise CorruptEntry(entry.key, "duplicate key")
        for wid in entry.key:
            if wid not in workloads:
                raise CorruptEntry(entry.key, f"unknown workload {wid!r}")
        entries[entry.key] = entry
    return AffinityMatrix(workloads, entries, thresholds, str(doc.get("created_at", "")), version)


def load_matrix(path: str | os.PathLike[str]) -> AffinityMatrix:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise StoreError(f"cannot read matrix file {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise StoreError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return matrix_from_dict(doc)


# -- reports ----------------------------------------------------------------------


@dataclass(frozen=True)
class CellRow:
    first_id: str
    second_id: str
    loss_first: float
    loss_second: float
    average: float
    distance: float
    classification: AffinityClass
    severity: int

    def csv_values(self) -> list[str]:
        return [
            self.first_id,
            self.second_id,
            repr(self.loss_first),
            repr(self.loss_second),
            repr(self.average),
            repr(self.distance),
            self.classification.value,
        ]


@dataclass(frozen=True)
class MatrixTable:
    grid: str
    rows: tuple[CellRow, ...]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(CELL_DUMP_COLUMNS)
        for row in self.rows:
            writer.writerow(row.csv_values())
        return buf.getvalue()


def severity_ranks(averages: list[float]) -> list[int]:
    """Integer 0-9 shading rank per value (min-max scaled, half rounded up)."""
    if not averages:
        return []
    return [int(math.floor(score + 0.5)) for score in normalize_scores(averages, 9.0)]


def _display_order(workloads: WorkloadSet) -> list[str]:
    specs = sorted(workloads, key=lambda s: (s.library.label, s.environment.label, s.id))
    return [s.id for s in specs]


def _format_loss(value: float) -> str:
    return f"{value:.0f}"


def render_matrix_table(matrix: AffinityMatrix) -> MatrixTable:
    """Grid view plus a flat per-entry dump of the matrix.

    Rows are the first workload of a key, columns the second, both ordered
    by (library, environment, id). Each cell shows ``loss_first/loss_second``
    followed by the severity rank in brackets.
    """
    entries = list(matrix.entries.values())
    ranks = severity_ranks([e.average for e in entries])
    rows = tuple(
        CellRow(e.key.first, e.key.second, e.loss_first, e.loss_second, e.average, e.distance, e.classification, rank)
        for e, rank in zip(entries, ranks)
    )
    by_key = {PairKey(r.first_id, r.second_id): r for r in rows}

    order = _display_order(matrix.workloads)
    row_ids = [wid for wid in order if any(k.first == wid for k in by_key)]
    col_ids = [wid for wid in order if any(k.second == wid for k in by_key)]
    header = ["first \\ second"] + col_ids
    table = [header]
    for rid in row_ids:
        line = [rid]
        for cid in col_ids:
            row = by_key.get(PairKey(rid, cid))
            if row is None:
                line.append("-")
            else:
                line.append(f"{_format_loss(row.loss_first)}/{_format_loss(row.loss_second)} [{row.severity}]")
        table.append(line)
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in table]
    if len(table) > 1:
        lines.insert(1, "  ".join("-" * w for w in widths))
    return MatrixTable(grid="\n".join(lines) + "\n", rows=rows)


def write_cell_dump(matrix: AffinityMatrix, path: str | os.PathLike[str]) -> None:
    Path(path).write_text(render_matrix_table(matrix).to_csv(), encoding="utf-8", newline="")


@dataclass(frozen=True)
class ImpactRow:
    workload_id: str
    suffered: float
    caused: float
    suffered_score: float
    caused_score: float


def impact_summary(matrix: AffinityMatrix) -> list[ImpactRow]:
    """Mean loss each workload suffers and inflicts, with 0-9 scores.

    A workload "suffers" its own side's loss in every entry it appears in and
    "causes" the partner's loss.
    """
    suffered: dict[str, list[float]] = {}
    caused: dict[str, list[float]] = {}
    for entry in matrix.entries.values():
        a, b = entry.key
        suffered.setdefault(a, []).append(entry.loss_first)
        suffered.setdefault(b, []).append(entry.loss_second)
        caused.setdefault(a, []).append(entry.loss_second)
        caused.setdefault(b, []).append(entry.loss_first)
    ids = [wid for wid in _display_order(matrix.workloads) if wid in suffered]
    if not ids:
        return []
    s_means = [statistics.fmean(suffered[w]) for w in ids]
    c_means = [statistics.fmean(caused[w]) for w in ids]
    s_scores = normalize_scores(s_means)
    c_scores = normalize_scores(c_means)
    return [ImpactRow(*vals) for vals in zip(ids, s_means, c_means, s_scores, c_scores)]


def render_impact(rows: list[ImpactRow]) -> str:
    lines = [f"{'workload':<24} {'suffered %':>11} {'score':>6} {'caused %':>11} {'score':>6}"]
    for r in rows:
        lines.append(
            f"{r.workload_id:<24} {r.suffered:>11.1f} {r.suffered_score:>6.2f} {r.caused:>11.1f} {r.caused_score:>6.2f}"
        )
    return "\n".join(lines) + "\n"
