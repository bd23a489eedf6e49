"""Voxel-grid geometry and the index-to-world affine map.

World coordinates are LPS millimetres: x grows toward the patient's left,
y toward posterior, z toward superior. The third index axis is the slice
(inferior-to-superior) axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundsError


@dataclass(frozen=True, eq=False)
class VolumeGeometry:
    """Regular voxel grid embedded in LPS world space.

    Column ``k`` of ``direction`` is the unit world direction of index
    axis ``k``; the affine is ``world = origin + direction @ (spacing * index)``.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    direction: np.ndarray

    def __post_init__(self):
        dims = tuple(int(v) for v in self.dims)
        spacing = tuple(float(v) for v in self.spacing)
        origin = tuple(float(v) for v in self.origin)
        direction = np.array(self.direction, dtype=float)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError(f"dims must be three positive integers, got {self.dims!r}")
        if len(spacing) != 3 or any(not np.isfinite(s) or s <= 0 for s in spacing):
            raise ValueError(f"spacing must be three positive reals, got {self.spacing!r}")
        if len(origin) != 3 or any(not np.isfinite(v) for v in origin):
            raise ValueError(f"origin must be three finite reals, got {self.origin!r}")
        if direction.shape != (3, 3) or not np.all(np.isfinite(direction)):
            raise ValueError("direction must be a finite 3x3 matrix")
        norms = np.linalg.norm(direction, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError(f"direction columns must have unit norm, got norms {norms.tolist()}")
        if np.linalg.det(direction) == 0.0:
            raise ValueError("direction matrix is singular")
        direction.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)

    def __eq__(self, other):
        if not isinstance(other, VolumeGeometry):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and self.origin == other.origin
            and np.array_equal(self.direction, other.direction)
        )

    @property
    def voxel_count(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def voxel_volume_mm3(self) -> float:
        det = abs(float(np.linalg.det(self.direction)))
        return det * self.spacing[0] * self.spacing[1] * self.spacing[2]

    def index_to_world(self, index) -> tuple[float, float, float]:
        """World position (mm) of a voxel index inside the grid."""
        idx = np.asarray(index, dtype=float)
        if idx.shape != (3,):
            raise ValueError(f"index must have three components, got {index!r}")
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.dims)):
            raise BoundsError(f"index {tuple(index)} outside dims {self.dims}")
        world = np.asarray(self.origin) + self.direction @ (np.asarray(self.spacing) * idx)
        return (float(world[0]), float(world[1]), float(world[2]))

    def indices_to_world(self, indices: np.ndarray) -> np.ndarray:
        """Vectorised affine for an (n, 3) array of (possibly fractional) indices."""
        idx = np.asarray(indices, dtype=float)
        if idx.ndim != 2 or idx.shape[1] != 3:
            raise ValueError("indices must be an (n, 3) array")
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.dims)):
            raise BoundsError("index array contains positions outside the grid")
        return np.asarray(self.origin) + (idx * np.asarray(self.spacing)) @ self.direction.T

    def world_to_continuous_index(self, points: np.ndarray) -> np.ndarray:
        """Inverse affine; returns fractional indices, unclipped."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        rel = pts - np.asarray(self.origin)
        inv = np.linalg.inv(self.direction)
        return (rel @ inv.T) / np.asarray(self.spacing)

    def center_world(self) -> np.ndarray:
        """World position of the grid center (fractional index (dims-1)/2)."""
        center_idx = (np.asarray(self.dims, dtype=float) - 1.0) / 2.0
        return self.indices_to_world(center_idx[None, :])[0]
