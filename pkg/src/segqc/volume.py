"""Label volumes: a voxel grid of segment labels plus per-segment metadata."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MetadataError
from .geometry import VolumeGeometry

LATERALITIES = ("left", "right", "none")


@dataclass(frozen=True)
class SegmentInfo:
    structure: str
    laterality: str  # "left" | "right" | "none"

    def __post_init__(self):
        if not self.structure:
            raise MetadataError("segment structure name must be non-empty")
        if self.laterality not in LATERALITIES:
            raise MetadataError(
                f"laterality must be one of {LATERALITIES}, got {self.laterality!r}"
            )


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Immutable 3D label mask with world geometry and segment metadata.

    ``voxels`` is indexed [x, y, z] with label 0 as background. Every
    nonzero label present in the array must appear in ``segments``.
    """

    geometry: VolumeGeometry
    voxels: np.ndarray
    segments: dict[int, SegmentInfo] = field(default_factory=dict)
    patient_id: str = ""
    study_id: str = ""
    series_id: str = ""
    acquisition_index: int = 0

    def __post_init__(self):
        voxels = np.asarray(self.voxels)
        if voxels.dtype not in (np.dtype(np.uint8), np.dtype(np.uint16)):
            # little-endian on-disk dtypes are fine too
            if voxels.dtype not in (np.dtype("<u1"), np.dtype("<u2")):
                raise ValueError(f"voxels dtype must be uint8 or uint16, got {voxels.dtype}")
        if voxels.shape != self.geometry.dims:
            raise ValueError(
                f"voxels shape {voxels.shape} does not match dims {self.geometry.dims}"
            )
        if self.acquisition_index < 0:
            raise MetadataError("acquisitionIndex must be >= 0")
        segments = dict(self.segments)
        for label in segments:
            if not isinstance(label, int) or label < 1:
                raise MetadataError(f"segment labels must be positive integers, got {label!r}")
        seen: dict[tuple[str, str], int] = {}
        for label, info in segments.items():
            key = (info.structure, info.laterality)
            if key in seen:
                raise MetadataError(
                    f"labels {seen[key]} and {label} both map to structure "
                    f"{info.structure!r} with laterality {info.laterality!r}"
                )
            seen[key] = label
        counts = np.bincount(voxels.ravel())
        present = np.flatnonzero(counts)
        missing = [int(v) for v in present if v != 0 and int(v) not in segments]
        if missing:
            raise MetadataError(
                f"labels {missing} present in voxels but missing from the segment map"
            )
        voxels.flags.writeable = False
        object.__setattr__(self, "voxels", voxels)
        object.__setattr__(self, "segments", segments)

    def __eq__(self, other):
        if not isinstance(other, LabelVolume):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and self.segments == other.segments
            and self.patient_id == other.patient_id
            and self.study_id == other.study_id
            and self.series_id == other.series_id
            and self.acquisition_index == other.acquisition_index
            and np.array_equal(self.voxels, other.voxels)
        )

    def label_for(self, structure: str, laterality: str) -> int | None:
        for label, info in self.segments.items():
            if info.structure == structure and info.laterality == laterality:
                return label
        return None
