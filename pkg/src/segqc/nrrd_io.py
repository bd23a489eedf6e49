"""Reader and writer for the supported NRRD subset plus the JSON sidecar.

Masks are NRRD0004, 3-D, uint8 or uint16, little endian, ``raw`` or
``gzip`` encoded, in ``left-posterior-superior`` space, with the voxel
payload in fastest-first (Fortran) order. The sidecar is a UTF-8 JSON
document with ``schemaVersion`` ``"segqc-1"`` carrying the DICOM-style
identifiers and the label -> (structure, laterality) map.

Gzip members are written with a zeroed mtime so that identical volumes
produce byte-identical files.
"""

from __future__ import annotations

import gzip
import io
import json
import zlib
from pathlib import Path

import numpy as np

from .errors import MetadataError, NrrdParseError, TruncationError
from .geometry import VolumeGeometry
from .volume import LATERALITIES, LabelVolume, SegmentInfo

_MAGIC = b"NRRD0004"
_SPACE = "left-posterior-superior"
_DTYPES = {"uint8": np.dtype("<u1"), "uint16": np.dtype("<u2")}
_REQUIRED = ("type", "dimension", "sizes", "space", "space directions", "space origin", "encoding")

SIDECAR_SCHEMA_VERSION = "segqc-1"
_SIDECAR_KEYS = {"schemaVersion", "patientId", "studyId", "seriesId", "acquisitionIndex", "segments"}
_SEGMENT_KEYS = {"label", "structure", "laterality"}


def _split_header(buf: bytes) -> tuple[list[bytes], int]:
    """Split raw bytes into header lines and the payload offset."""
    if not buf.startswith(_MAGIC) or len(buf) <= len(_MAGIC):
        raise NrrdParseError("file does not start with NRRD0004 magic", field="magic")
    lines: list[bytes] = []
    pos = 0
    while True:
        nl = buf.find(b"\n", pos)
        if nl < 0:
            raise NrrdParseError("header not terminated by a blank line", field="header")
        line = buf[pos:nl]
        if line.endswith(b"\r"):
            line = line[:-1]
        pos = nl + 1
        if line == b"":
            return lines, pos
        lines.append(line)


def _parse_fields(lines: list[bytes]) -> dict[str, str]:
    fields: dict[str, str] = {}
    for raw in lines[1:]:  # lines[0] is the magic
        if raw.startswith(b"#"):
            continue
        try:
            line = raw.decode("ascii")
        except UnicodeDecodeError:
            raise NrrdParseError("header contains non-ASCII bytes", field="header")
        if ":=" in line:  # key-value pairs are outside the subset; skip
            continue
        if ": " not in line:
            raise NrrdParseError(f"malformed header line {line!r}", field="header")
        key, value = line.split(": ", 1)
        key = key.strip().lower()
        if key in fields:
            raise NrrdParseError(f"duplicate header field {key!r}", field=key)
        fields[key] = value.strip()
    return fields


def _parse_vector(text: str, field: str) -> np.ndarray:
    text = text.strip()
    if not (text.startswith("(") and text.endswith(")")):
        raise NrrdParseError(f"{field} component {text!r} is not a (a,b,c) vector", field=field)
    try:
        parts = [float(p) for p in text[1:-1].split(",")]
    except ValueError:
        raise NrrdParseError(f"{field} component {text!r} has non-numeric entries", field=field)
    if len(parts) != 3:
        raise NrrdParseError(f"{field} component {text!r} must have three entries", field=field)
    return np.array(parts, dtype=float)


def read_nrrd(path) -> tuple[VolumeGeometry, np.ndarray]:
    """Parse a mask file into geometry and a read-only [x, y, z] voxel array."""
    buf = Path(path).read_bytes()
    lines, data_offset = _split_header(buf)
    fields = _parse_fields(lines)
    for name in _REQUIRED:
        if name not in fields:
            raise NrrdParseError(f"required header field {name!r} missing", field=name)

    if fields["type"] not in _DTYPES:
        raise NrrdParseError(
            f"type must be uint8 or uint16, got {fields['type']!r}", field="type"
        )
    dtype = _DTYPES[fields["type"]]
    if fields["dimension"] != "3":
        raise NrrdParseError(
            f"dimension must be 3, got {fields['dimension']!r}", field="dimension"
        )
    if fields["space"] != _SPACE:
        raise NrrdParseError(f"space must be {_SPACE}, got {fields['space']!r}", field="space")
    if fields["encoding"] not in ("raw", "gzip"):
        raise NrrdParseError(
            f"encoding must be raw or gzip, got {fields['encoding']!r}", field="encoding"
        )
    endian = fields.get("endian")
    if endian is not None and endian != "little":
        raise NrrdParseError(f"endian must be little, got {endian!r}", field="endian")
    if dtype.itemsize > 1 and endian is None:
        raise NrrdParseError("endian field required for uint16 data", field="endian")

    try:
        sizes = [int(s) for s in fields["sizes"].split()]
    except ValueError:
        raise NrrdParseError(f"sizes {fields['sizes']!r} must be integers", field="sizes")
    if len(sizes) != 3 or any(s < 1 for s in sizes):
        raise NrrdParseError(f"sizes must be three positive integers, got {sizes}", field="sizes")

    vec_texts = fields["space directions"].split(") ")
    vec_texts = [t if t.endswith(")") else t + ")" for t in vec_texts]
    if len(vec_texts) != 3:
        raise NrrdParseError("space directions must hold three vectors", field="space directions")
    cols = np.stack([_parse_vector(t, "space directions") for t in vec_texts], axis=1)
    norms = np.linalg.norm(cols, axis=0)
    if np.any(norms <= 0) or not np.all(np.isfinite(norms)):
        raise NrrdParseError("space directions contain a zero-length axis", field="space directions")
    origin = _parse_vector(fields["space origin"], "space origin")
    try:
        geometry = VolumeGeometry(
            dims=tuple(sizes),
            spacing=tuple(float(n) for n in norms),
            origin=tuple(float(v) for v in origin),
            direction=cols / norms,
        )
    except ValueError as exc:
        raise NrrdParseError(f"invalid grid geometry: {exc}", field="space directions")

    payload = buf[data_offset:]
    if fields["encoding"] == "gzip":
        try:
            payload = gzip.decompress(payload)
        except (OSError, EOFError, zlib.error) as exc:
            raise NrrdParseError(f"gzip payload is corrupt: {exc}", field="encoding")
    expected = sizes[0] * sizes[1] * sizes[2] * dtype.itemsize
    if len(payload) != expected:
        raise TruncationError(
            f"voxel payload has {len(payload)} bytes but sizes {tuple(sizes)} "
            f"require {expected}",
            field="sizes",
        )
    voxels = np.frombuffer(payload, dtype=dtype).reshape(tuple(sizes), order="F")
    return geometry, voxels


def read_sidecar(path) -> dict:
    """Parse and validate the sidecar; returns plain Python values."""
    try:
        doc = json.loads(Path(path).read_text("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MetadataError(f"sidecar is not valid UTF-8 JSON: {exc}")
    if not isinstance(doc, dict):
        raise MetadataError("sidecar must be a JSON object")
    unknown = set(doc) - _SIDECAR_KEYS
    if unknown:
        raise MetadataError(f"sidecar has unknown keys {sorted(unknown)}")
    missing = _SIDECAR_KEYS - set(doc)
    if missing:
        raise MetadataError(f"sidecar is missing keys {sorted(missing)}")
    if doc["schemaVersion"] != SIDECAR_SCHEMA_VERSION:
        raise MetadataError(
            f"schemaVersion must be {SIDECAR_SCHEMA_VERSION!r}, got {doc['schemaVersion']!r}"
        )
    for key in ("patientId", "studyId", "seriesId"):
        if not isinstance(doc[key], str):
            raise MetadataError(f"sidecar {key} must be a string")
    if not isinstance(doc["acquisitionIndex"], int) or doc["acquisitionIndex"] < 0:
        raise MetadataError("sidecar acquisitionIndex must be an integer >= 0")
    if not isinstance(doc["segments"], list):
        raise MetadataError("sidecar segments must be a list")
    segments: dict[int, SegmentInfo] = {}
    for entry in doc["segments"]:
        if not isinstance(entry, dict) or set(entry) != _SEGMENT_KEYS:
            raise MetadataError(f"segment entries must have keys {sorted(_SEGMENT_KEYS)}")
        label = entry["label"]
        if not isinstance(label, int) or label < 1:
            raise MetadataError(f"segment label must be a positive integer, got {label!r}")
        if label in segments:
            raise MetadataError(f"duplicate segment label {label}")
        if entry["laterality"] not in LATERALITIES:
            raise MetadataError(
                f"segment laterality must be one of {LATERALITIES}, got {entry['laterality']!r}"
            )
        if not isinstance(entry["structure"], str) or not entry["structure"]:
            raise MetadataError("segment structure must be a non-empty string")
        segments[label] = SegmentInfo(structure=entry["structure"], laterality=entry["laterality"])
    return {
        "patient_id": doc["patientId"],
        "study_id": doc["studyId"],
        "series_id": doc["seriesId"],
        "acquisition_index": doc["acquisitionIndex"],
        "segments": segments,
    }


def read_label_volume(mask_path, sidecar_path) -> LabelVolume:
    """Read a mask/sidecar pair into a validated LabelVolume."""
    geometry, voxels = read_nrrd(mask_path)
    meta = read_sidecar(sidecar_path)
    return LabelVolume(geometry=geometry, voxels=voxels, **meta)


def _format_vector(vec) -> str:
    return "(" + ",".join(repr(float(v)) for v in vec) + ")"


def write_nrrd(geometry: VolumeGeometry, voxels: np.ndarray, path, encoding: str = "gzip") -> None:
    if encoding not in ("raw", "gzip"):
        raise ValueError(f"encoding must be raw or gzip, got {encoding!r}")
    voxels = np.asarray(voxels)
    if voxels.shape != geometry.dims:
        raise ValueError(f"voxels shape {voxels.shape} does not match dims {geometry.dims}")
    dtype_name = {1: "uint8", 2: "uint16"}.get(voxels.dtype.itemsize)
    if voxels.dtype.kind != "u" or dtype_name is None:
        raise ValueError(f"voxels dtype must be uint8 or uint16, got {voxels.dtype}")
    cols = geometry.direction * np.asarray(geometry.spacing)
    header = "\n".join(
        [
            "NRRD0004",
            "# segqc label mask",
            f"type: {dtype_name}",
            "dimension: 3",
            "sizes: {} {} {}".format(*geometry.dims),
            f"space: {_SPACE}",
            "space directions: "
            + " ".join(_format_vector(cols[:, k]) for k in range(3)),
            f"space origin: {_format_vector(geometry.origin)}",
            "endian: little",
            f"encoding: {encoding}",
            "",
            "",
        ]
    )
    payload = np.ascontiguousarray(voxels.astype(voxels.dtype.newbyteorder("<"))).tobytes(order="F")
    if encoding == "gzip":
        buf = io.BytesIO()
        with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0) as gz:
            gz.write(payload)
        payload = buf.getvalue()
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(payload)


def write_sidecar(volume: LabelVolume, path) -> None:
    doc = {
        "schemaVersion": SIDECAR_SCHEMA_VERSION,
        "patientId": volume.patient_id,
        "studyId": volume.study_id,
        "seriesId": volume.series_id,
        "acquisitionIndex": volume.acquisition_index,
        "segments": [
            {"label": label, "structure": info.structure, "laterality": info.laterality}
            for label, info in sorted(volume.segments.items())
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", "utf-8")


def write_label_volume(volume: LabelVolume, mask_path, sidecar_path, encoding: str = "gzip") -> None:
    """Write a mask/sidecar pair that read_label_volume reproduces exactly."""
    counts = np.bincount(volume.voxels.ravel())
    present = [int(v) for v in np.flatnonzero(counts) if v != 0]
    missing = [v for v in present if v not in volume.segments]
    if missing:
        raise MetadataError(f"labels {missing} present in voxels but missing from the segment map")
    write_nrrd(volume.geometry, volume.voxels, mask_path, encoding=encoding)
    write_sidecar(volume, sidecar_path)
