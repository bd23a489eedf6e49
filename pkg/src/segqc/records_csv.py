"""Bit-exact CSV serialization of SegmentQCRecords.

Header and value formats are pinned: booleans as true/false, laterality
outcome as pass/fail/na, reals with 6 significant digits, UTF-8, LF line
endings. Absent values (center of mass or z extent of an empty segment)
are empty fields.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, TextIO

from .errors import SchemaError
from .qc import SegmentFeatures, SegmentQCRecord

QC_CSV_COLUMNS = (
    "patientId",
    "studyId",
    "seriesId",
    "acquisitionIndex",
    "structure",
    "laterality",
    "voxelCount",
    "volumeMl",
    "comX",
    "comY",
    "comZ",
    "connectedComponentCount",
    "largestComponentVoxels",
    "zMin",
    "zMax",
    "completenessPass",
    "connectedPass",
    "lateralityPass",
    "minVolumePass",
)


def format_real(value: float | None) -> str:
    return "" if value is None else f"{float(value):.6g}"


def _format_bool(value: bool) -> str:
    return "true" if value else "false"


def record_to_row(record: SegmentQCRecord) -> list[str]:
    f = record.features
    com = f.center_of_mass_world or (None, None, None)
    z_min, z_max = f.z_extent if f.z_extent is not None else (None, None)
    return [
        record.patient_id,
        record.study_id,
        record.series_id,
        str(record.acquisition_index),
        record.structure,
        record.laterality,
        str(f.voxel_count),
        format_real(f.volume_ml),
        format_real(com[0]),
        format_real(com[1]),
        format_real(com[2]),
        str(f.connected_component_count),
        str(f.largest_component_voxels),
        "" if z_min is None else str(z_min),
        "" if z_max is None else str(z_max),
        _format_bool(record.completeness_pass),
        _format_bool(record.connected_pass),
        record.laterality_pass,
        _format_bool(record.min_volume_pass),
    ]


def _parse(row: dict[str, str], column: str, kind):
    raw = row[column]
    try:
        return kind(raw)
    except ValueError:
        raise SchemaError(f"column {column!r}: cannot parse {raw!r}")


def _parse_bool(row: dict[str, str], column: str) -> bool:
    raw = row[column]
    if raw == "true":
        return True
    if raw == "false":
        return False
    raise SchemaError(f"column {column!r}: expected true/false, got {raw!r}")


def row_to_record(row: dict[str, str]) -> SegmentQCRecord:
    com_fields = (row["comX"], row["comY"], row["comZ"])
    if any(v == "" for v in com_fields) != all(v == "" for v in com_fields):
        raise SchemaError("columns comX/comY/comZ must be all present or all empty")
    com = None
    if com_fields[0] != "":
        com = tuple(_parse(row, c, float) for c in ("comX", "comY", "comZ"))
    z_extent = None
    if row["zMin"] != "" or row["zMax"] != "":
        z_extent = (_parse(row, "zMin", int), _parse(row, "zMax", int))
    largest = _parse(row, "largestComponentVoxels", int)
    laterality_pass = row["lateralityPass"]
    if laterality_pass not in ("pass", "fail", "na"):
        raise SchemaError(f"column 'lateralityPass': expected pass/fail/na, got {laterality_pass!r}")
    features = SegmentFeatures(
        voxel_count=_parse(row, "voxelCount", int),
        volume_ml=_parse(row, "volumeMl", float),
        center_of_mass_world=com,
        connected_component_count=_parse(row, "connectedComponentCount", int),
        largest_component_voxels=largest,
        z_extent=z_extent,
        component_sizes=None,  # only the largest size survives the CSV
    )
    return SegmentQCRecord(
        patient_id=row["patientId"],
        study_id=row["studyId"],
        series_id=row["seriesId"],
        acquisition_index=_parse(row, "acquisitionIndex", int),
        structure=row["structure"],
        laterality=row["laterality"],
        features=features,
        completeness_pass=_parse_bool(row, "completenessPass"),
        connected_pass=_parse_bool(row, "connectedPass"),
        laterality_pass=laterality_pass,
        min_volume_pass=_parse_bool(row, "minVolumePass"),
    )


class QcCsvWriter:
    """Streaming writer; rows are flushed as they arrive."""

    def __init__(self, stream: TextIO):
        self._writer = csv.writer(stream, lineterminator="\n")
        self._writer.writerow(QC_CSV_COLUMNS)

    def write_record(self, record: SegmentQCRecord) -> None:
        self._writer.writerow(record_to_row(record))

    def write_row(self, row: list[str]) -> None:
        self._writer.writerow(row)


def write_qc_csv(records: Iterable[SegmentQCRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = QcCsvWriter(fh)
        for record in records:
            writer.write_record(record)


def read_qc_csv(path) -> list[SegmentQCRecord]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("QC CSV is empty (missing header)")
        if tuple(header) != QC_CSV_COLUMNS:
            extra = set(header) - set(QC_CSV_COLUMNS)
            missing = set(QC_CSV_COLUMNS) - set(header)
            problem = (sorted(extra) + sorted(missing) or ["header order"])[0]
            raise SchemaError(f"QC CSV header mismatch at column {problem!r}")
        records = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(QC_CSV_COLUMNS):
                raise SchemaError(f"line {line_no}: expected {len(QC_CSV_COLUMNS)} fields")
            records.append(row_to_record(dict(zip(QC_CSV_COLUMNS, row))))
    return records
