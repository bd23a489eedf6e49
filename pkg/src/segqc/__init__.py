"""Quality control for AI-generated volumetric segmentations without ground truth.

Four geometric heuristics per segment (completeness along the slice axis,
connected-component count, left/right center-of-mass ordering, minimum
voxel-summation volume), cohort-level consistency analytics with
random-intercept mixed models, a synthetic phantom generator that serves
as a ground-truth oracle, and a CLI plus read-only HTTP API.

World coordinates are LPS: x increases toward the patient's left, which
is what makes the laterality check a simple comparison of center-of-mass
x coordinates.
"""

from .cohort import (
    CohortTable,
    FilterSpec,
    ReferenceRange,
    SummaryRow,
    apply_filters,
    compare_reference,
    default_filter_chain,
    lr_diff_stats,
    read_reference_csv,
    summary_by_structure,
    upset_counts,
    within_patient_sd,
)
from .connectivity import component_sizes, count_components, neighbor_offsets
from .errors import (
    BoundsError,
    DegenerateDesignError,
    DomainError,
    MetadataError,
    NrrdParseError,
    PhantomSpecError,
    PlacementError,
    SchemaError,
    SegQCError,
    TruncationError,
)
from .geometry import VolumeGeometry
from .mixed_model import MixedModelFit, fit_random_intercept
from .nrrd_io import read_label_volume, read_nrrd, read_sidecar, write_label_volume, write_nrrd
from .phantom import (
    DefectEntry,
    DefectRates,
    PhantomSpec,
    StructureSpec,
    generate_cohort,
    read_defect_log,
)
from .qc import (
    HeuristicConfig,
    SegmentFeatures,
    SegmentQCRecord,
    center_of_mass_world,
    completeness_check,
    compute_segment_features,
    count_connected_components,
    evaluate_series,
    laterality_check_pair,
    normalized_lr_diff,
    segment_volume_ml,
)
from .records_csv import QC_CSV_COLUMNS, read_qc_csv, write_qc_csv
from .volume import LabelVolume, SegmentInfo

__version__ = "0.1.0"
