import numpy as np
import pytest
from hypothesis import settings

from segqc.geometry import VolumeGeometry
from segqc.volume import LabelVolume, SegmentInfo

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def identity_geometry(dims, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    return VolumeGeometry(dims=dims, spacing=spacing, origin=origin, direction=np.eye(3))


def make_volume(voxels, segments=None, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0), **ids):
    voxels = np.asarray(voxels, dtype=np.uint8)
    if segments is None:
        labels = sorted(int(v) for v in np.unique(voxels) if v != 0)
        segments = {lab: SegmentInfo(f"structure_{lab}", "none") for lab in labels}
    return LabelVolume(
        geometry=identity_geometry(voxels.shape, spacing, origin),
        voxels=voxels,
        segments=segments,
        **ids,
    )


@pytest.fixture(scope="session")
def mixed_cohort(tmp_path_factory):
    """Small phantom cohort with every defect type, plus its QC CSV."""
    from segqc.cli import main
    from segqc.phantom import DefectRates, PhantomSpec, generate_cohort

    out = tmp_path_factory.mktemp("mixed_cohort")
    spec = PhantomSpec(
        patients=4,
        studies_per_patient=2,
        series_per_study=2,
        defect_rates=DefectRates(truncation=0.15, fragment=0.15, swap=0.10, shrink=0.10),
        random_seed=11,
    )
    entries = generate_cohort(spec, out / "volumes")
    csv_path = out / "qc.csv"
    code = main(["run-qc", "--input", str(out / "volumes"), "--output", str(csv_path)])
    assert code == 0
    return {"spec": spec, "entries": entries, "dir": out / "volumes", "csv": csv_path}
