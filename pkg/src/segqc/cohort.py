"""Cohort-level analytics over QC records.

Covers the summary table, filter pipelines, upset partitioning,
within-patient volume consistency, left/right volume difference tracking
across successive filter stages, and comparison against user-supplied
reference ranges.

A laterality outcome of "na" counts as a pass for ``require_pass`` filters
and for upset partitioning by default (a check that could not run should
not condemn a segment); set ``na_is_pass=False`` on a FilterSpec to flip
that.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DomainError, SchemaError
from .qc import LATERALITY_FAIL, LATERALITY_NA, LATERALITY_PASS, SegmentQCRecord
from .records_csv import read_qc_csv

log = logging.getLogger(__name__)

HEURISTICS = ("completeness", "connected", "laterality", "minVolume")

UPSET_COMBINATIONS = tuple("".join(bits) for bits in product("PF", repeat=4))

# The paper's successive filter order: completeness, single component,
# minimum volume, laterality.
DEFAULT_FILTER_CHAIN_NAMES = ("completeness", "connected", "minVolume", "laterality")


def heuristic_outcome(record: SegmentQCRecord, heuristic: str) -> bool | str:
    if heuristic == "completeness":
        return record.completeness_pass
    if heuristic == "connected":
        return record.connected_pass
    if heuristic == "laterality":
        return record.laterality_pass
    if heuristic == "minVolume":
        return record.min_volume_pass
    raise ValueError(f"unknown heuristic {heuristic!r}")


def heuristic_passes(record: SegmentQCRecord, heuristic: str, na_is_pass: bool = True) -> bool:
    outcome = heuristic_outcome(record, heuristic)
    if heuristic == "laterality":
        if outcome == LATERALITY_NA:
            return na_is_pass
        return outcome == LATERALITY_PASS
    return bool(outcome)


def heuristic_fails(record: SegmentQCRecord, heuristic: str) -> bool:
    outcome = heuristic_outcome(record, heuristic)
    if heuristic == "laterality":
        return outcome == LATERALITY_FAIL
    return not outcome


@dataclass(frozen=True)
class FilterSpec:
    structure: str | None = None
    laterality: str | None = None
    require_pass: frozenset[str] = frozenset()
    require_fail: frozenset[str] = frozenset()
    na_is_pass: bool = True

    def __post_init__(self):
        require_pass = frozenset(self.require_pass)
        require_fail = frozenset(self.require_fail)
        for name in require_pass | require_fail:
            if name not in HEURISTICS:
                raise ValueError(f"unknown heuristic {name!r}; expected one of {HEURISTICS}")
        if require_pass & require_fail:
            raise ValueError(
                f"heuristics {sorted(require_pass & require_fail)} in both requirePass and requireFail"
            )
        if self.laterality is not None and self.laterality not in ("left", "right", "none"):
            raise ValueError(f"laterality filter must be left/right/none, got {self.laterality!r}")
        object.__setattr__(self, "require_pass", require_pass)
        object.__setattr__(self, "require_fail", require_fail)

    def matches(self, record: SegmentQCRecord) -> bool:
        if self.structure is not None and record.structure != self.structure:
            return False
        if self.laterality is not None and record.laterality != self.laterality:
            return False
        for name in self.require_pass:
            if not heuristic_passes(record, name, self.na_is_pass):
                return False
        for name in self.require_fail:
            if not heuristic_fails(record, name):
                return False
        return True


class CohortTable:
    """Immutable collection of QC records keyed by (seriesId, structure, laterality)."""

    def __init__(self, records: Iterable[SegmentQCRecord]):
        records = tuple(records)
        seen: set[tuple[str, str, str]] = set()
        for record in records:
            key = (record.series_id, record.structure, record.laterality)
            if key in seen:
                raise ValueError(f"duplicate record for {key}")
            seen.add(key)
        self._records = records

    @classmethod
    def from_csv(cls, path) -> "CohortTable":
        return cls(read_qc_csv(path))

    @property
    def records(self) -> tuple[SegmentQCRecord, ...]:
        return self._records

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def structures(self) -> list[str]:
        return sorted({r.structure for r in self._records})

    def filter(self, spec: FilterSpec) -> "CohortTable":
        return CohortTable(r for r in self._records if spec.matches(r))


def apply_filters(table: CohortTable, spec: FilterSpec) -> CohortTable:
    """Subset of the table matching every constraint of the spec; idempotent."""
    return table.filter(spec)


@dataclass(frozen=True)
class SummaryRow:
    structure: str
    heuristic: str
    pass_count: int
    total_count: int
    percentage: float | None  # None when no record was applicable


def summary_by_structure(table: CohortTable) -> list[SummaryRow]:
    """Per-structure pass percentages for each heuristic applied independently.

    Laterality percentages are computed over applicable records only
    (outcome != "na").
    """
    rows: list[SummaryRow] = []
    for structure in table.structures():
        records = [r for r in table if r.structure == structure]
        for heuristic in HEURISTICS:
            if heuristic == "laterality":
                scoped = [r for r in records if r.laterality_pass != LATERALITY_NA]
                passed = sum(1 for r in scoped if r.laterality_pass == LATERALITY_PASS)
            else:
                scoped = records
                passed = sum(1 for r in scoped if heuristic_passes(r, heuristic))
            total = len(scoped)
            pct = 100.0 * passed / total if total else None
            rows.append(SummaryRow(structure, heuristic, passed, total, pct))
    return rows


def upset_counts(table: CohortTable, na_is_pass: bool = True) -> dict[str, int]:
    """16-way partition of records by pass/fail combination.

    Keys are 4-character strings over {P, F} in heuristic order
    (completeness, connected, laterality, minVolume). Counts sum to the
    number of records.
    """
    counts = {combo: 0 for combo in UPSET_COMBINATIONS}
    for record in table:
        key = "".join(
            "P" if heuristic_passes(record, h, na_is_pass) else "F" for h in HEURISTICS
        )
        counts[key] += 1
    return counts


def _sample_sd(values: Sequence[float]) -> float:
    n = len(values)
    mean = sum(values) / n
    return math.sqrt(sum((v - mean) ** 2 for v in values) / (n - 1))


def within_patient_sd(
    table: CohortTable,
    structure: str,
    laterality: str | None = None,
    filters: FilterSpec | None = None,
) -> list[float]:
    """Per-patient sample SDs of volumeMl over in-scope records.

    Patients with fewer than two in-scope records are excluded. The result
    is ordered by patientId so repeated calls line up pairwise.
    """
    by_patient: dict[str, list[float]] = {}
    for record in table:
        if record.structure != structure:
            continue
        if laterality is not None and record.laterality != laterality:
            continue
        if filters is not None and not filters.matches(record):
            continue
        by_patient.setdefault(record.patient_id, []).append(record.features.volume_ml)
    return [
        _sample_sd(volumes)
        for _, volumes in sorted(by_patient.items())
        if len(volumes) >= 2
    ]


@dataclass(frozen=True)
class LrDiffSample:
    series_id: str
    patient_id: str
    value: float


@dataclass(frozen=True)
class LrDiffStage:
    stage: int
    n: int
    mean: float | None
    sd: float | None
    samples: tuple[LrDiffSample, ...] = field(repr=False)


def default_filter_chain(na_is_pass: bool = True) -> list[FilterSpec]:
    return [
        FilterSpec(require_pass=frozenset({name}), na_is_pass=na_is_pass)
        for name in DEFAULT_FILTER_CHAIN_NAMES
    ]


def lr_diff_stats(
    table: CohortTable, structure: str, filter_chain: Sequence[FilterSpec]
) -> list[LrDiffStage]:
    """Normalized (left-right)/(left+right) volume stats per cumulative filter stage.

    Stage 0 is the unfiltered data; stage k applies the first k filters of
    the chain. A series contributes to a stage only when both sides
    survive that stage's filters (and both have positive volume).
    """
    pairs: dict[str, dict[str, SegmentQCRecord]] = {}
    lateralities = set()
    for record in table:
        if record.structure != structure:
            continue
        lateralities.add(record.laterality)
        if record.laterality in ("left", "right"):
            pairs.setdefault(record.series_id, {})[record.laterality] = record
    if not ("left" in lateralities and "right" in lateralities):
        raise DomainError(
            f"structure {structure!r} is not paired (needs records on both sides)"
        )

    stages: list[LrDiffStage] = []
    for k in range(len(filter_chain) + 1):
        active = filter_chain[:k]
        samples = []
        for series_id in sorted(pairs):
            sides = pairs[series_id]
            left = sides.get("left")
            right = sides.get("right")
            if left is None or right is None:
                continue
            if left.features.volume_ml <= 0 or right.features.volume_ml <= 0:
                continue
            if any(not spec.matches(left) or not spec.matches(right) for spec in active):
                continue
            value = (left.features.volume_ml - right.features.volume_ml) / (
                left.features.volume_ml + right.features.volume_ml
            )
            samples.append(LrDiffSample(series_id, left.patient_id, value))
        n = len(samples)
        mean = sum(s.value for s in samples) / n if n else None
        sd = _sample_sd([s.value for s in samples]) if n >= 2 else None
        stages.append(LrDiffStage(stage=k, n=n, mean=mean, sd=sd, samples=tuple(samples)))
    return stages


@dataclass(frozen=True)
class ReferenceRange:
    structure: str
    mean_ml: float
    sd_ml: float
    source: str

    def __post_init__(self):
        if self.sd_ml < 0:
            raise ValueError(f"reference SD must be >= 0, got {self.sd_ml}")


REFERENCE_CSV_COLUMNS = ("structure", "meanMl", "sdMl", "source")


def read_reference_csv(path) -> list[ReferenceRange]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("reference CSV is empty (missing header)")
        if tuple(header) != REFERENCE_CSV_COLUMNS:
            raise SchemaError(
                f"reference CSV header must be {','.join(REFERENCE_CSV_COLUMNS)}"
            )
        refs = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise SchemaError(f"line {line_no}: expected 4 fields")
            try:
                refs.append(ReferenceRange(row[0], float(row[1]), float(row[2]), row[3]))
            except ValueError as exc:
                raise SchemaError(f"line {line_no}: {exc}")
    return refs


@dataclass(frozen=True)
class ReferenceComparison:
    structure: str
    cohort_mean: float
    cohort_sd: float | None
    ref_mean: float
    ref_sd: float


def compare_reference(
    table: CohortTable, refs: Sequence[ReferenceRange], filters: FilterSpec | None = None
) -> tuple[list[ReferenceComparison], bool]:
    """Cohort mean/SD per structure next to the reference values.

    Returns the per-structure rows (in reference order) and a flag that is
    True when the cohort means are rank-ordered the same way as the
    reference means. Structures without records are omitted with a warning.
    """
    if not refs:
        raise DomainError("reference list must not be empty")
    scoped = table if filters is None else apply_filters(table, filters)
    rows: list[ReferenceComparison] = []
    for ref in refs:
        volumes = [r.features.volume_ml for r in scoped if r.structure == ref.structure]
        if not volumes:
            log.warning("reference structure %r has no records in scope; omitted", ref.structure)
            continue
        mean = sum(volumes) / len(volumes)
        sd = _sample_sd(volumes) if len(volumes) >= 2 else None
        rows.append(ReferenceComparison(ref.structure, mean, sd, ref.mean_ml, ref.sd_ml))

    ordered = True
    for i in range(len(rows)):
        for j in range(i + 1, len(rows)):
            cohort_sign = (rows[i].cohort_mean > rows[j].cohort_mean) - (
                rows[i].cohort_mean < rows[j].cohort_mean
            )
            ref_sign = (rows[i].ref_mean > rows[j].ref_mean) - (
                rows[i].ref_mean < rows[j].ref_mean
            )
            if cohort_sign != ref_sign:
                ordered = False
    return rows, ordered
