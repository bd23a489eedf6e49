"""Per-segment geometric features and the four QC heuristics.

The four checks per segment:

* completeness -- at least one empty slice below and above the segment
  along the third (inferior-superior) axis;
* connected    -- component count within the configured maximum;
* laterality   -- for paired structures, the left segment's world-x center
  of mass must exceed the right's (LPS: x grows to the patient's left);
* minVolume    -- voxel-summation volume at or above the threshold.

Empty segments fail every boolean check; laterality is "na" whenever the
contralateral partner is missing or either side is empty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .connectivity import CONNECTIVITIES, count_components
from .errors import DomainError, MetadataError
from .volume import LabelVolume

LATERALITY_PASS = "pass"
LATERALITY_FAIL = "fail"
LATERALITY_NA = "na"


@dataclass(frozen=True)
class SegmentFeatures:
    voxel_count: int
    volume_ml: float
    center_of_mass_world: tuple[float, float, float] | None
    connected_component_count: int
    largest_component_voxels: int
    z_extent: tuple[int, int] | None
    component_sizes: tuple[int, ...] | None = None  # None when loaded from CSV

    def __post_init__(self):
        if self.component_sizes is not None:
            if sum(self.component_sizes) != self.voxel_count:
                raise ValueError("component sizes must sum to the voxel count")
            if len(self.component_sizes) != self.connected_component_count:
                raise ValueError("component count must match the size list length")
            expected_largest = self.component_sizes[0] if self.component_sizes else 0
            if self.largest_component_voxels != expected_largest:
                raise ValueError("largest component size inconsistent with the size list")
        if (self.voxel_count == 0) != (self.center_of_mass_world is None):
            raise ValueError("center of mass must be absent exactly when the segment is empty")
        if (self.voxel_count == 0) != (self.z_extent is None):
            raise ValueError("z extent must be absent exactly when the segment is empty")


@dataclass(frozen=True)
class HeuristicConfig:
    min_volume_ml: float = 5.0
    max_components: int = 1
    connectivity: int = 26
    require_empty_terminal_slices: bool = True

    def __post_init__(self):
        if not self.min_volume_ml > 0:
            raise ValueError(f"min_volume_ml must be > 0, got {self.min_volume_ml}")
        if self.max_components < 1:
            raise ValueError(f"max_components must be >= 1, got {self.max_components}")
        if self.connectivity not in CONNECTIVITIES:
            raise ValueError(
                f"connectivity must be one of {CONNECTIVITIES}, got {self.connectivity}"
            )


@dataclass(frozen=True)
class SegmentQCRecord:
    patient_id: str
    study_id: str
    series_id: str
    acquisition_index: int
    structure: str
    laterality: str
    features: SegmentFeatures
    completeness_pass: bool
    connected_pass: bool
    laterality_pass: str  # "pass" | "fail" | "na"
    min_volume_pass: bool


def _segment_coords(volume: LabelVolume, label: int) -> np.ndarray:
    if label not in volume.segments:
        raise MetadataError(f"label {label} not present in the segment map")
    return np.argwhere(volume.voxels == label)


def segment_volume_ml(volume: LabelVolume, label: int) -> float:
    """Voxel-summation volume in millilitres."""
    if label not in volume.segments:
        raise MetadataError(f"label {label} not present in the segment map")
    count = int(np.count_nonzero(volume.voxels == label))
    return count * volume.geometry.voxel_volume_mm3 / 1000.0


def center_of_mass_world(volume: LabelVolume, label: int) -> tuple[float, float, float] | None:
    """Unweighted mean world position of the segment's voxels; None when empty."""
    coords = _segment_coords(volume, label)
    if coords.shape[0] == 0:
        return None
    mean_idx = coords.mean(axis=0)
    world = volume.geometry.indices_to_world(mean_idx[None, :])[0]
    return (float(world[0]), float(world[1]), float(world[2]))


def completeness_check(volume: LabelVolume, label: int) -> bool:
    """True iff the segment is non-empty and clear of both terminal slices."""
    coords = _segment_coords(volume, label)
    if coords.shape[0] == 0:
        return False
    z = coords[:, 2]
    return bool(z.min() >= 1 and z.max() <= volume.geometry.dims[2] - 2)


def count_connected_components(
    volume: LabelVolume, label: int, connectivity: int = 26
) -> tuple[int, tuple[int, ...]]:
    """Component count and descending component sizes for one segment."""
    coords = _segment_coords(volume, label)
    if coords.shape[0] == 0:
        return 0, ()
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    crop = volume.voxels[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1, lo[2] : hi[2] + 1]
    return count_components(crop == label, connectivity)


def compute_segment_features(
    volume: LabelVolume, label: int, connectivity: int = 26
) -> SegmentFeatures:
    coords = _segment_coords(volume, label)
    count = int(coords.shape[0])
    volume_ml = count * volume.geometry.voxel_volume_mm3 / 1000.0
    if count == 0:
        return SegmentFeatures(
            voxel_count=0,
            volume_ml=0.0,
            center_of_mass_world=None,
            connected_component_count=0,
            largest_component_voxels=0,
            z_extent=None,
            component_sizes=(),
        )
    mean_idx = coords.mean(axis=0)
    world = volume.geometry.indices_to_world(mean_idx[None, :])[0]
    z = coords[:, 2]
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    crop = volume.voxels[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1, lo[2] : hi[2] + 1]
    cc_count, sizes = count_components(crop == label, connectivity)
    return SegmentFeatures(
        voxel_count=count,
        volume_ml=volume_ml,
        center_of_mass_world=(float(world[0]), float(world[1]), float(world[2])),
        connected_component_count=cc_count,
        largest_component_voxels=sizes[0],
        z_extent=(int(z.min()), int(z.max())),
        component_sizes=sizes,
    )


def laterality_check_pair(
    left_com: tuple[float, float, float], right_com: tuple[float, float, float]
) -> tuple[bool, bool]:
    """Both pass iff the left center of mass is strictly more leftward (larger x)."""
    ok = left_com[0] > right_com[0]
    return ok, ok


def normalized_lr_diff(left_ml: float, right_ml: float) -> float:
    """(left - right) / (left + right); requires both volumes positive."""
    if not (left_ml > 0 and right_ml > 0) or not np.isfinite([left_ml, right_ml]).all():
        raise DomainError(
            f"normalized L/R difference needs positive volumes, got {left_ml}, {right_ml}"
        )
    return (left_ml - right_ml) / (left_ml + right_ml)


_OPPOSITE = {"left": "right", "right": "left"}


def evaluate_series(volume: LabelVolume, config: HeuristicConfig = HeuristicConfig()) -> list[SegmentQCRecord]:
    """Evaluate all four heuristics for every segment of one series.

    Returns one record per segment map entry, sorted by (structure,
    laterality). Laterality pairs segments sharing a structure name with
    opposite sides within the series.
    """
    features = {
        label: compute_segment_features(volume, label, config.connectivity)
        for label in volume.segments
    }
    by_key = {(info.structure, info.laterality): label for label, info in volume.segments.items()}

    records = []
    for label, info in sorted(
        volume.segments.items(), key=lambda item: (item[1].structure, item[1].laterality)
    ):
        feats = features[label]
        nonempty = feats.voxel_count > 0
        if not nonempty:
            completeness = False
        elif config.require_empty_terminal_slices:
            z_min, z_max = feats.z_extent
            completeness = z_min >= 1 and z_max <= volume.geometry.dims[2] - 2
        else:
            completeness = True
        connected = 1 <= feats.connected_component_count <= config.max_components
        min_volume = nonempty and feats.volume_ml >= config.min_volume_ml

        if info.laterality == "none":
            laterality = LATERALITY_NA
        else:
            partner = by_key.get((info.structure, _OPPOSITE[info.laterality]))
            if partner is None or not nonempty or features[partner].voxel_count == 0:
                laterality = LATERALITY_NA
            else:
                own = feats.center_of_mass_world
                other = features[partner].center_of_mass_world
                left_com, right_com = (own, other) if info.laterality == "left" else (other, own)
                ok, _ = laterality_check_pair(left_com, right_com)
                laterality = LATERALITY_PASS if ok else LATERALITY_FAIL

        records.append(
            SegmentQCRecord(
                patient_id=volume.patient_id,
                study_id=volume.study_id,
                series_id=volume.series_id,
                acquisition_index=volume.acquisition_index,
                structure=info.structure,
                laterality=info.laterality,
                features=feats,
                completeness_pass=completeness,
                connected_pass=connected,
                laterality_pass=laterality,
                min_volume_pass=min_volume,
            )
        )
    return records
