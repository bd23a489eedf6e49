import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from segqc.errors import BoundsError
from segqc.geometry import VolumeGeometry

from conftest import identity_geometry


def rotation_z_90():
    return np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


class TestValidation:
    def test_rejects_zero_dims(self):
        with pytest.raises(ValueError):
            identity_geometry((0, 4, 4))

    def test_rejects_nonpositive_spacing(self):
        with pytest.raises(ValueError):
            identity_geometry((4, 4, 4), spacing=(1.0, -1.0, 1.0))

    def test_rejects_non_unit_direction(self):
        with pytest.raises(ValueError):
            VolumeGeometry((4, 4, 4), (1, 1, 1), (0, 0, 0), np.eye(3) * 2.0)

    def test_rejects_singular_direction(self):
        direction = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        direction[:, 1] = direction[:, 0]
        with pytest.raises(ValueError):
            VolumeGeometry((4, 4, 4), (1, 1, 1), (0, 0, 0), direction)

    def test_tolerates_near_unit_norm_within_1e6(self):
        direction = np.eye(3) * (1.0 + 5e-7)
        geometry = VolumeGeometry((4, 4, 4), (1, 1, 1), (0, 0, 0), direction)
        assert geometry.dims == (4, 4, 4)


class TestIndexToWorld:
    def test_identity_origin_offset(self):
        g = identity_geometry((4, 4, 4), origin=(10.0, 20.0, 30.0))
        assert g.index_to_world((0, 0, 0)) == (10.0, 20.0, 30.0)

    def test_anisotropic_spacing(self):
        g = identity_geometry((8, 8, 8), spacing=(0.7, 0.7, 2.5))
        assert g.index_to_world((2, 0, 4)) == pytest.approx((1.4, 0.0, 10.0), abs=0)

    def test_rotation_about_z(self):
        g = VolumeGeometry((4, 4, 4), (1, 1, 1), (0, 0, 0), rotation_z_90())
        assert g.index_to_world((1, 0, 0)) == pytest.approx((0.0, 1.0, 0.0), abs=0)

    def test_out_of_range_raises(self):
        g = identity_geometry((4, 4, 4))
        with pytest.raises(BoundsError):
            g.index_to_world((4, 0, 0))
        with pytest.raises(BoundsError):
            g.index_to_world((0, -1, 0))

    @given(
        st.tuples(st.integers(0, 9), st.integers(0, 9), st.integers(0, 9)),
        st.tuples(st.integers(0, 5), st.integers(0, 5), st.integers(0, 5)),
        st.tuples(st.integers(0, 5), st.integers(0, 5), st.integers(0, 5)),
    )
    def test_affine_offsets_independent_of_base(self, base, a, b):
        # index_to_world(base + offset) - index_to_world(base) depends only on the offset
        g = identity_geometry((16, 16, 16), spacing=(0.5, 2.0, 1.25), origin=(3.0, -7.0, 11.0))
        w0 = np.array(g.index_to_world(base))
        wa = np.array(g.index_to_world(tuple(np.add(base, a))))
        wb = np.array(g.index_to_world(tuple(np.add(base, b))))
        direct_a = np.array(g.index_to_world(a)) - np.array(g.index_to_world((0, 0, 0)))
        direct_b = np.array(g.index_to_world(b)) - np.array(g.index_to_world((0, 0, 0)))
        np.testing.assert_allclose(wa - w0, direct_a, atol=1e-12)
        np.testing.assert_allclose(wb - w0, direct_b, atol=1e-12)


class TestDerived:
    def test_voxel_volume_identity(self):
        g = identity_geometry((4, 4, 4), spacing=(0.5, 0.5, 2.0))
        assert g.voxel_volume_mm3 == pytest.approx(0.5)

    def test_voxel_volume_rotation_invariant(self):
        g = VolumeGeometry((4, 4, 4), (0.7, 0.7, 2.5), (0, 0, 0), rotation_z_90())
        assert g.voxel_volume_mm3 == pytest.approx(0.7 * 0.7 * 2.5)

    def test_world_roundtrip(self):
        g = VolumeGeometry((8, 8, 8), (0.7, 1.3, 2.5), (5.0, -2.0, 9.0), rotation_z_90())
        idx = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0], [7.0, 7.0, 7.0]])
        world = g.indices_to_world(idx)
        back = g.world_to_continuous_index(world)
        np.testing.assert_allclose(back, idx, atol=1e-12)
