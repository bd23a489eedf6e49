"""Synthetic cohorts with analytically known segments and a defect log.

Each generated series is one label volume holding every structure of the
spec, plus a sidecar. Segments are placed interior to the grid, single
component, above the minimum-volume threshold, and correctly sided, so a
clean segment passes all four heuristics by construction. Injected
defects are built to trip exactly one heuristic each:

* truncation -- clips the inferior or superior part of a segment and
  slides it onto the terminal slice (fails completeness only);
* fragment   -- adds small satellite clusters beyond the 26-neighbourhood
  of the body (fails the connected-component check only);
* swap       -- exchanges the left/right assignment of a pair in the
  sidecar (fails laterality only, for both sides);
* shrink     -- re-rasterises the shape at a volume below the threshold
  (fails minimum volume only).

At most one defect is applied per segment, so each heuristic's failure
set must equal the corresponding defect-log subset exactly.

Randomness comes from numpy's PCG64 generator; every series derives its
own stream from (randomSeed, patient, study, series), so output is
byte-identical across runs and independent of generation order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import PhantomSpecError, PlacementError, SchemaError
from .geometry import VolumeGeometry
from .nrrd_io import write_label_volume
from .volume import LATERALITIES, LabelVolume, SegmentInfo

TRUNCATION_FRAC_RANGE = (0.08, 0.15)
FRAGMENT_CLUSTER_EDGE = 2  # clusters are 2x2x2 voxel cubes
FRAGMENT_MIN_GAP = 3  # Chebyshev distance from the main body
_VOXELIZATION_MARGIN = 0.95


@dataclass(frozen=True)
class StructureSpec:
    name: str
    laterality: str  # "left" | "right" | "none"
    shape: str  # "ellipsoid" | "box"
    semi_axes_mm: tuple[float, float, float]
    center_offset_mm: tuple[float, float, float]  # relative to the volume center, world mm


@dataclass(frozen=True)
class DefectRates:
    truncation: float = 0.0
    fragment: float = 0.0
    swap: float = 0.0
    shrink: float = 0.0


# Non-overlapping layout for a 128x128x64 grid at 1 mm spacing: paired
# structures sit in mirrored x bands, unpaired ones in the central x gap,
# with y bands keeping every structure in its own (x, y) column so that
# truncation shifts along z can never collide.
DEFAULT_STRUCTURES: tuple[StructureSpec, ...] = (
    StructureSpec("kidney", "left", "ellipsoid", (20, 15, 12), (32, -41.5, -8)),
    StructureSpec("kidney", "right", "ellipsoid", (20, 15, 12), (-32, -41.5, -8)),
    StructureSpec("rib_4", "left", "ellipsoid", (14, 12, 10), (36, 0.5, 6)),
    StructureSpec("rib_4", "right", "ellipsoid", (14, 12, 10), (-36, 0.5, 6)),
    StructureSpec("lung", "left", "ellipsoid", (18, 14, 11), (32, 42.5, 8)),
    StructureSpec("lung", "right", "ellipsoid", (18, 14, 11), (-32, 42.5, 8)),
    # box half-extents chosen so faces never land exactly on voxel centers
    StructureSpec("trachea", "none", "box", (11.3, 10.3, 8.3), (0, -13.5, -12)),
    StructureSpec("vertebra_t8", "none", "ellipsoid", (11, 13, 12), (0, -41.5, 8)),
    StructureSpec("vertebra_t9", "none", "ellipsoid", (11, 14, 12), (0, 13.5, 10)),
    StructureSpec("vertebra_t10", "none", "ellipsoid", (11, 15, 12), (0, 45, -6)),
)


@dataclass(frozen=True)
class PhantomSpec:
    patients: int = 5
    studies_per_patient: int = 3
    series_per_study: int = 2
    structures: tuple[StructureSpec, ...] = DEFAULT_STRUCTURES
    volume_dims: tuple[int, int, int] = (128, 128, 64)
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    defect_rates: DefectRates = field(default_factory=DefectRates)
    truncation_laterality: str | None = None  # restrict truncation to one side
    random_seed: int = 0
    scale_jitter: float = 0.02  # per-scan uniform shape-scale perturbation
    shrink_target_ml: float = 4.0
    min_clean_volume_ml: float = 5.0


@dataclass(frozen=True)
class DefectEntry:
    series_id: str
    structure: str
    laterality: str
    defect_type: str  # "truncation" | "fragment" | "swap" | "shrink"
    param1: str
    param2: str


DEFECT_CSV_COLUMNS = ("seriesId", "structure", "laterality", "defectType", "param1", "param2")
DEFECT_TYPES = ("truncation", "fragment", "swap", "shrink")


def _analytic_volume_mm3(shape: str, semi: tuple[float, float, float]) -> float:
    a, b, c = semi
    if shape == "ellipsoid":
        return 4.0 / 3.0 * math.pi * a * b * c
    return 8.0 * a * b * c  # box: semi axes are half-extents


def validate_spec(spec: PhantomSpec) -> None:
    """Raise PhantomSpecError listing every invalid field."""
    problems: list[str] = []
    for name in ("patients", "studies_per_patient", "series_per_study"):
        if getattr(spec, name) < 1:
            problems.append(f"{name} must be >= 1")
    if len(spec.volume_dims) != 3 or any(d < 1 for d in spec.volume_dims):
        problems.append("volume_dims must be three positive integers")
    if len(spec.spacing_mm) != 3 or any(s <= 0 for s in spec.spacing_mm):
        problems.append("spacing_mm must be three positive reals")
    rates = spec.defect_rates
    for name in ("truncation", "fragment", "swap", "shrink"):
        rate = getattr(rates, name)
        if not 0.0 <= rate <= 1.0:
            problems.append(f"defect_rates.{name} must be in [0, 1]")
    if rates.truncation + rates.fragment + rates.shrink > 1.0:
        problems.append("defect_rates: truncation + fragment + shrink must not exceed 1")
    if spec.truncation_laterality not in (None, "left", "right"):
        problems.append("truncation_laterality must be left, right, or null")
    if not 0.0 <= spec.scale_jitter < 0.5:
        problems.append("scale_jitter must be in [0, 0.5)")
    if spec.shrink_target_ml <= 0:
        problems.append("shrink_target_ml must be > 0")
    if rates.shrink > 0 and spec.shrink_target_ml >= spec.min_clean_volume_ml:
        problems.append("shrink_target_ml must be below min_clean_volume_ml")
    if spec.random_seed < 0:
        problems.append("random_seed must be >= 0")
    if not spec.structures:
        problems.append("structures must not be empty")

    if problems:
        raise PhantomSpecError("invalid phantom spec: " + "; ".join(problems))

    geometry = _spec_geometry(spec)
    seen: set[tuple[str, str]] = set()
    max_scale = 1.0 + spec.scale_jitter
    min_scale_cubed = (1.0 - spec.scale_jitter) ** 3
    for s in spec.structures:
        label = f"structure {s.name!r}/{s.laterality}"
        if not s.name:
            problems.append("structure name must be non-empty")
            continue
        if s.laterality not in LATERALITIES:
            problems.append(f"{label}: laterality must be one of {LATERALITIES}")
            continue
        if (s.name, s.laterality) in seen:
            problems.append(f"{label}: duplicated")
        seen.add((s.name, s.laterality))
        if s.shape not in ("ellipsoid", "box"):
            problems.append(f"{label}: shape must be ellipsoid or box")
            continue
        if len(s.semi_axes_mm) != 3 or any(a <= 0 for a in s.semi_axes_mm):
            problems.append(f"{label}: semi_axes_mm must be three positive reals")
            continue
        lo, hi = _index_bbox(geometry, s, max_scale)
        dims = geometry.dims
        if np.any(lo < 0) or np.any(hi > np.asarray(dims) - 1):
            problems.append(f"{label}: shape does not fit inside the volume at max jitter")
        elif not (lo[2] >= 1 and hi[2] <= dims[2] - 2):
            problems.append(f"{label}: shape must stay clear of the terminal slices")
        analytic_ml = _analytic_volume_mm3(s.shape, s.semi_axes_mm) / 1000.0
        floor_ml = analytic_ml * min_scale_cubed * _VOXELIZATION_MARGIN
        if rates.truncation > 0 and (
            spec.truncation_laterality is None or s.laterality == spec.truncation_laterality
        ):
            floor_ml *= 1.0 - TRUNCATION_FRAC_RANGE[1]
        if floor_ml < spec.min_clean_volume_ml:
            problems.append(
                f"{label}: worst-case volume {floor_ml:.2f} mL falls below "
                f"min_clean_volume_ml {spec.min_clean_volume_ml}"
            )
    if problems:
        raise PhantomSpecError("invalid phantom spec: " + "; ".join(problems))


def _spec_geometry(spec: PhantomSpec) -> VolumeGeometry:
    return VolumeGeometry(
        dims=tuple(spec.volume_dims),
        spacing=tuple(spec.spacing_mm),
        origin=(0.0, 0.0, 0.0),
        direction=np.eye(3),
    )


def _shape_center_world(geometry: VolumeGeometry, structure: StructureSpec) -> np.ndarray:
    return geometry.center_world() + np.asarray(structure.center_offset_mm, dtype=float)


def _index_bbox(
    geometry: VolumeGeometry, structure: StructureSpec, scale: float
) -> tuple[np.ndarray, np.ndarray]:
    """Continuous index AABB of the (world-axis-aligned) shape at a scale."""
    center = _shape_center_world(geometry, structure)
    semi = np.asarray(structure.semi_axes_mm, dtype=float) * scale
    corners = center + semi * np.array(list(np.ndindex(2, 2, 2)), dtype=float) * 2 - semi
    idx = geometry.world_to_continuous_index(corners)
    return idx.min(axis=0), idx.max(axis=0)


def _rasterize(
    geometry: VolumeGeometry, structure: StructureSpec, scale: float
) -> tuple[tuple[slice, slice, slice], np.ndarray]:
    """Voxel mask of the shape (center-inclusion test) over its bounding box."""
    center = _shape_center_world(geometry, structure)
    semi = np.asarray(structure.semi_axes_mm, dtype=float) * scale
    lo_f, hi_f = _index_bbox(geometry, structure, scale)
    dims = np.asarray(geometry.dims)
    lo = np.clip(np.floor(lo_f).astype(int), 0, dims - 1)
    hi = np.clip(np.ceil(hi_f).astype(int), 0, dims - 1)
    shape = tuple(hi - lo + 1)
    grid = np.stack(
        np.meshgrid(
            np.arange(lo[0], hi[0] + 1),
            np.arange(lo[1], hi[1] + 1),
            np.arange(lo[2], hi[2] + 1),
            indexing="ij",
        ),
        axis=-1,
    ).reshape(-1, 3)
    world = geometry.indices_to_world(grid)
    rel = world - center
    if structure.shape == "ellipsoid":
        inside = ((rel / semi) ** 2).sum(axis=1) <= 1.0
    else:
        inside = (np.abs(rel) <= semi).all(axis=1)
    slices = tuple(slice(int(lo[k]), int(hi[k]) + 1) for k in range(3))
    return slices, inside.reshape(shape)


def inject_truncation(
    voxels: np.ndarray, label: int, rng: np.random.Generator
) -> tuple[str, float]:
    """Clip the segment at a terminal-touching plane; returns (terminal, fraction)."""
    coords = np.argwhere(voxels == label)
    if coords.shape[0] == 0:
        raise PlacementError(f"label {label} has no voxels to truncate")
    dims_z = voxels.shape[2]
    zs = coords[:, 2]
    n = coords.shape[0]
    frac = float(rng.uniform(*TRUNCATION_FRAC_RANGE))
    n_cut = min(max(1, round(frac * n)), n - 1)
    to_bottom = bool(rng.random() < 0.5)
    if to_bottom:
        z_threshold = int(np.partition(zs, n_cut)[n_cut])
        keep = zs >= z_threshold
        new_z = zs[keep] - z_threshold
        terminal = "bottom"
    else:
        z_threshold = int(np.partition(zs, n - 1 - n_cut)[n - 1 - n_cut])
        keep = zs <= z_threshold
        new_z = zs[keep] + (dims_z - 1 - z_threshold)
        terminal = "top"
    kept = coords[keep]
    voxels[tuple(coords.T)] = 0
    targets = (kept[:, 0], kept[:, 1], new_z)
    if np.any(voxels[targets] != 0):
        raise PlacementError(f"truncated segment {label} would collide with another segment")
    voxels[targets] = label
    return terminal, frac


def inject_fragment(
    voxels: np.ndarray, label: int, rng: np.random.Generator, k: int
) -> int:
    """Add k disjoint satellite clusters beyond the 26-neighbourhood of the body."""
    coords = np.argwhere(voxels == label)
    if coords.shape[0] == 0:
        raise PlacementError(f"label {label} has no voxels to fragment")
    dims = voxels.shape
    lo = coords.min(axis=0) - 10
    hi = coords.max(axis=0) + 10
    edge = FRAGMENT_CLUSTER_EDGE
    gap = FRAGMENT_MIN_GAP
    lo = np.maximum(lo, [0, 0, 1])
    hi = np.minimum(hi, [dims[0] - edge, dims[1] - edge, dims[2] - 1 - edge])
    placed = 0
    for _ in range(500):
        if placed == k:
            break
        origin = np.array([int(rng.integers(lo[a], hi[a] + 1)) for a in range(3)])
        target = voxels[
            origin[0] : origin[0] + edge,
            origin[1] : origin[1] + edge,
            origin[2] : origin[2] + edge,
        ]
        if target.shape != (edge, edge, edge) or np.any(target != 0):
            continue
        window = voxels[
            max(0, origin[0] - gap + 1) : origin[0] + edge + gap - 1,
            max(0, origin[1] - gap + 1) : origin[1] + edge + gap - 1,
            max(0, origin[2] - gap + 1) : origin[2] + edge + gap - 1,
        ]
        if np.any(window == label):
            continue
        target[...] = label
        placed += 1
    if placed < k:
        raise PlacementError(
            f"could not place {k} fragment clusters for label {label} within bounds"
        )
    return placed


def inject_shrink(
    voxels: np.ndarray,
    label: int,
    geometry: VolumeGeometry,
    structure: StructureSpec,
    target_ml: float,
) -> float:
    """Re-rasterise the shape below the volume threshold; returns achieved mL."""
    analytic_ml = _analytic_volume_mm3(structure.shape, structure.semi_axes_mm) / 1000.0
    scale = (target_ml / analytic_ml) ** (1.0 / 3.0)
    voxels[voxels == label] = 0
    slices, mask = _rasterize(geometry, structure, scale)
    region = voxels[slices]
    if np.any(region[mask] != 0):
        raise PlacementError(f"shrunk segment {label} would collide with another segment")
    region[mask] = label
    count = int(mask.sum())
    return count * geometry.voxel_volume_mm3 / 1000.0


def _series_rng(spec: PhantomSpec, patient: int, study: int, series: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=spec.random_seed, spawn_key=(patient, study, series))
    return np.random.default_rng(seq)


def _build_series(
    spec: PhantomSpec,
    geometry: VolumeGeometry,
    patient_id: str,
    study_id: str,
    series_id: str,
    acquisition_index: int,
    rng: np.random.Generator,
) -> tuple[LabelVolume, list[DefectEntry]]:
    n = len(spec.structures)
    rates = spec.defect_rates

    # Fixed draw order keeps output independent of everything but the seed:
    # scales first, then pair-level swaps, then per-segment defect picks.
    scales = [1.0 + spec.scale_jitter * (2.0 * rng.random() - 1.0) for _ in range(n)]

    by_name: dict[str, dict[str, int]] = {}
    for idx, s in enumerate(spec.structures):
        if s.laterality in ("left", "right"):
            by_name.setdefault(s.name, {})[s.laterality] = idx
    swapped: set[int] = set()
    for name in sorted(by_name):
        sides = by_name[name]
        if "left" in sides and "right" in sides and rng.random() < rates.swap:
            swapped.add(sides["left"])
            swapped.add(sides["right"])

    defects: dict[int, str] = {idx: "swap" for idx in swapped}
    for idx, s in enumerate(spec.structures):
        if idx in swapped:
            continue
        u = rng.random()
        trunc_rate = rates.truncation
        if spec.truncation_laterality is not None and s.laterality != spec.truncation_laterality:
            trunc_rate = 0.0
        if u < trunc_rate:
            defects[idx] = "truncation"
        elif u < trunc_rate + rates.fragment:
            defects[idx] = "fragment"
        elif u < trunc_rate + rates.fragment + rates.shrink:
            defects[idx] = "shrink"

    dtype = np.uint8 if n <= 255 else np.uint16
    voxels = np.zeros(geometry.dims, dtype=dtype)
    for idx, s in enumerate(spec.structures):
        label = idx + 1
        if defects.get(idx) == "shrink":
            continue  # rasterised directly at the shrunken scale below
        slices, mask = _rasterize(geometry, s, scales[idx])
        region = voxels[slices]
        if np.any(region[mask] != 0):
            raise PhantomSpecError(
                f"structure {s.name!r}/{s.laterality} overlaps another structure"
            )
        region[mask] = label

    entries: list[DefectEntry] = []
    for idx, s in enumerate(spec.structures):
        label = idx + 1
        kind = defects.get(idx)
        if kind is None:
            continue
        if kind == "swap":
            entries.append(DefectEntry(series_id, s.name, s.laterality, "swap", "pair", ""))
        elif kind == "truncation":
            terminal, frac = inject_truncation(voxels, label, rng)
            entries.append(
                DefectEntry(series_id, s.name, s.laterality, "truncation", terminal, f"{frac:.4f}")
            )
        elif kind == "fragment":
            k = int(rng.integers(1, 3))
            placed = inject_fragment(voxels, label, rng, k)
            entries.append(
                DefectEntry(
                    series_id, s.name, s.laterality, "fragment",
                    str(placed), str(FRAGMENT_CLUSTER_EDGE**3),
                )
            )
        elif kind == "shrink":
            achieved = inject_shrink(voxels, label, geometry, s, spec.shrink_target_ml)
            entries.append(
                DefectEntry(
                    series_id, s.name, s.laterality, "shrink",
                    f"{spec.shrink_target_ml:.6g}", f"{achieved:.6g}",
                )
            )

    segments: dict[int, SegmentInfo] = {}
    for idx, s in enumerate(spec.structures):
        laterality = s.laterality
        if idx in swapped:
            laterality = "right" if s.laterality == "left" else "left"
        segments[idx + 1] = SegmentInfo(structure=s.name, laterality=laterality)

    volume = LabelVolume(
        geometry=geometry,
        voxels=voxels,
        segments=segments,
        patient_id=patient_id,
        study_id=study_id,
        series_id=series_id,
        acquisition_index=acquisition_index,
    )
    return volume, entries


def generate_cohort(spec: PhantomSpec, out_dir) -> list[DefectEntry]:
    """Emit one mask/sidecar pair per series plus defects.csv; returns the log.

    Deterministic for a given spec: identical seeds yield byte-identical
    output trees.
    """
    validate_spec(spec)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    geometry = _spec_geometry(spec)
    entries: list[DefectEntry] = []
    for pi in range(spec.patients):
        patient_id = f"P{pi:04d}"
        for si in range(spec.studies_per_patient):
            study_id = f"{patient_id}-S{si:02d}"
            for ri in range(spec.series_per_study):
                series_id = f"{study_id}-R{ri:02d}"
                rng = _series_rng(spec, pi, si, ri)
                volume, series_entries = _build_series(
                    spec, geometry, patient_id, study_id, series_id, si, rng
                )
                write_label_volume(
                    volume, out_dir / f"{series_id}.nrrd", out_dir / f"{series_id}.json"
                )
                entries.extend(series_entries)
    entries.sort(key=lambda e: (e.series_id, e.structure, e.laterality))
    write_defect_log(entries, out_dir / "defects.csv")
    return entries


def write_defect_log(entries, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DEFECT_CSV_COLUMNS)
        for e in entries:
            writer.writerow([e.series_id, e.structure, e.laterality, e.defect_type, e.param1, e.param2])


def read_defect_log(path) -> list[DefectEntry]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != DEFECT_CSV_COLUMNS:
            raise SchemaError(f"defect log header must be {','.join(DEFECT_CSV_COLUMNS)}")
        entries = []
        for row in reader:
            if len(row) != 6:
                raise SchemaError("defect log rows must have 6 fields")
            if row[3] not in DEFECT_TYPES:
                raise SchemaError(f"unknown defect type {row[3]!r}")
            entries.append(DefectEntry(*row))
    return entries


def spec_from_json(doc: dict) -> PhantomSpec:
    """Build a PhantomSpec from its JSON form, collecting all field errors."""
    if not isinstance(doc, dict):
        raise PhantomSpecError("phantom spec must be a JSON object")
    known = {
        "patients", "studiesPerPatient", "seriesPerStudy", "structures",
        "volumeDims", "spacingMm", "defectRates", "truncationLaterality",
        "randomSeed", "scaleJitter", "shrinkTargetMl", "minCleanVolumeMl",
    }
    problems = [f"unknown field {k!r}" for k in sorted(set(doc) - known)]

    def take(key, default, kind, convert):
        if key not in doc:
            return default
        try:
            return convert(doc[key])
        except (TypeError, ValueError):
            problems.append(f"field {key!r} must be {kind}")
            return default

    patients = take("patients", 5, "an integer", int)
    studies = take("studiesPerPatient", 3, "an integer", int)
    series = take("seriesPerStudy", 2, "an integer", int)
    dims = take("volumeDims", (128, 128, 64), "three integers", lambda v: tuple(int(x) for x in v))
    spacing = take("spacingMm", (1.0, 1.0, 1.0), "three reals", lambda v: tuple(float(x) for x in v))
    seed = take("randomSeed", 0, "an integer", int)
    jitter = take("scaleJitter", 0.02, "a real", float)
    shrink_target = take("shrinkTargetMl", 4.0, "a real", float)
    min_clean = take("minCleanVolumeMl", 5.0, "a real", float)
    trunc_side = doc.get("truncationLaterality")
    if trunc_side is not None and trunc_side not in ("left", "right"):
        problems.append("field 'truncationLaterality' must be left, right, or null")
        trunc_side = None

    rates = DefectRates()
    if "defectRates" in doc:
        raw = doc["defectRates"]
        if not isinstance(raw, dict) or set(raw) - set(DEFECT_TYPES):
            problems.append(f"field 'defectRates' must map a subset of {DEFECT_TYPES} to reals")
        else:
            try:
                rates = DefectRates(**{k: float(v) for k, v in raw.items()})
            except (TypeError, ValueError):
                problems.append("field 'defectRates' must map defect names to reals")

    structures: tuple[StructureSpec, ...] = DEFAULT_STRUCTURES
    if "structures" in doc:
        raw = doc["structures"]
        parsed = []
        if not isinstance(raw, list):
            problems.append("field 'structures' must be a list")
        else:
            for i, entry in enumerate(raw):
                want = {"name", "laterality", "shape", "semiAxesMm", "centerOffsetMm"}
                if not isinstance(entry, dict) or set(entry) != want:
                    problems.append(f"structures[{i}] must have keys {sorted(want)}")
                    continue
                try:
                    parsed.append(
                        StructureSpec(
                            name=str(entry["name"]),
                            laterality=str(entry["laterality"]),
                            shape=str(entry["shape"]),
                            semi_axes_mm=tuple(float(v) for v in entry["semiAxesMm"]),
                            center_offset_mm=tuple(float(v) for v in entry["centerOffsetMm"]),
                        )
                    )
                except (TypeError, ValueError):
                    problems.append(f"structures[{i}] has malformed values")
        if parsed:
            structures = tuple(parsed)

    if problems:
        raise PhantomSpecError("invalid phantom spec: " + "; ".join(problems))

    spec = PhantomSpec(
        patients=patients,
        studies_per_patient=studies,
        series_per_study=series,
        structures=structures,
        volume_dims=dims,
        spacing_mm=spacing,
        defect_rates=rates,
        truncation_laterality=trunc_side,
        random_seed=seed,
        scale_jitter=jitter,
        shrink_target_ml=shrink_target,
        min_clean_volume_ml=min_clean,
    )
    validate_spec(spec)
    return spec
