import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segqc.cohort import (
    HEURISTICS,
    UPSET_COMBINATIONS,
    CohortTable,
    FilterSpec,
    ReferenceRange,
    apply_filters,
    compare_reference,
    default_filter_chain,
    lr_diff_stats,
    summary_by_structure,
    upset_counts,
    within_patient_sd,
)
from segqc.errors import DomainError
from segqc.qc import SegmentFeatures, SegmentQCRecord


def synth_record(
    patient="P1",
    series="R1",
    structure="kidney",
    laterality="left",
    volume_ml=10.0,
    completeness=True,
    connected=True,
    laterality_pass="pass",
    min_volume=True,
):
    voxels = max(1, int(volume_ml * 1000))
    features = SegmentFeatures(
        voxel_count=voxels,
        volume_ml=volume_ml,
        center_of_mass_world=(0.0, 0.0, 0.0),
        connected_component_count=1,
        largest_component_voxels=voxels,
        z_extent=(2, 5),
        component_sizes=(voxels,),
    )
    return SegmentQCRecord(
        patient_id=patient,
        study_id=f"{patient}-S0",
        series_id=series,
        acquisition_index=0,
        structure=structure,
        laterality=laterality,
        features=features,
        completeness_pass=completeness,
        connected_pass=connected,
        laterality_pass=laterality_pass,
        min_volume_pass=min_volume,
    )


def random_table(rng, n=60):
    records = []
    structures = ["kidney", "rib_4", "spleen"]
    for i in range(n):
        structure = structures[int(rng.integers(0, len(structures)))]
        laterality = (
            "none" if structure == "spleen" else ("left" if rng.random() < 0.5 else "right")
        )
        records.append(
            synth_record(
                patient=f"P{int(rng.integers(0, 6))}",
                series=f"R{i}",
                structure=structure,
                laterality=laterality,
                volume_ml=float(rng.uniform(1, 20)),
                completeness=bool(rng.random() < 0.8),
                connected=bool(rng.random() < 0.8),
                laterality_pass=(
                    "na" if laterality == "none" else ("pass" if rng.random() < 0.8 else "fail")
                ),
                min_volume=bool(rng.random() < 0.8),
            )
        )
    return CohortTable(records)


def random_filter(rng):
    names = list(HEURISTICS)
    require_pass = {n for n in names if rng.random() < 0.3}
    require_fail = {n for n in names if n not in require_pass and rng.random() < 0.2}
    return FilterSpec(
        structure=None if rng.random() < 0.6 else "kidney",
        laterality=None if rng.random() < 0.7 else "left",
        require_pass=frozenset(require_pass),
        require_fail=frozenset(require_fail),
    )


class TestCohortTable:
    def test_rejects_duplicate_key(self):
        with pytest.raises(ValueError):
            CohortTable([synth_record(), synth_record()])

    def test_structures_sorted(self):
        table = CohortTable(
            [synth_record(structure="b", series="1"), synth_record(structure="a", series="2")]
        )
        assert table.structures() == ["a", "b"]


class TestFilterSpec:
    def test_rejects_overlap(self):
        with pytest.raises(ValueError):
            FilterSpec(require_pass=frozenset({"connected"}), require_fail=frozenset({"connected"}))

    def test_rejects_unknown_heuristic(self):
        with pytest.raises(ValueError):
            FilterSpec(require_pass=frozenset({"volume"}))

    def test_empty_filter_is_identity(self):
        table = random_table(np.random.default_rng(0))
        assert apply_filters(table, FilterSpec()).records == table.records

    def test_na_counts_as_pass_by_default(self):
        record = synth_record(laterality="none", laterality_pass="na")
        assert FilterSpec(require_pass=frozenset({"laterality"})).matches(record)
        assert not FilterSpec(
            require_pass=frozenset({"laterality"}), na_is_pass=False
        ).matches(record)
        assert not FilterSpec(require_fail=frozenset({"laterality"})).matches(record)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=30)
    def test_idempotent(self, seed):
        rng = np.random.default_rng(seed)
        table = random_table(rng)
        spec = random_filter(rng)
        once = apply_filters(table, spec)
        twice = apply_filters(once, spec)
        assert once.records == twice.records

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=30)
    def test_chained_filters_equal_set_intersection(self, seed):
        rng = np.random.default_rng(seed)
        table = random_table(rng)
        spec_a = random_filter(rng)
        spec_b = random_filter(rng)
        chained = apply_filters(apply_filters(table, spec_a), spec_b)
        oracle = [r for r in table if spec_a.matches(r) and spec_b.matches(r)]
        assert list(chained.records) == oracle


class TestSummary:
    def test_percentage_arithmetic(self):
        records = [
            synth_record(series=f"R{i}", completeness=(i < 7)) for i in range(10)
        ]
        table = CohortTable(records)
        row = next(
            r for r in summary_by_structure(table)
            if r.structure == "kidney" and r.heuristic == "completeness"
        )
        assert row.pass_count == 7
        assert row.total_count == 10
        assert row.percentage == pytest.approx(70.0)

    def test_laterality_over_applicable_only(self):
        records = [
            synth_record(series="R1", laterality="none", laterality_pass="na", structure="spleen"),
            synth_record(series="R2", laterality="none", laterality_pass="na", structure="spleen"),
        ]
        table = CohortTable(records)
        row = next(
            r for r in summary_by_structure(table)
            if r.structure == "spleen" and r.heuristic == "laterality"
        )
        assert row.total_count == 0
        assert row.percentage is None

    def test_rows_sorted(self):
        table = random_table(np.random.default_rng(1))
        rows = summary_by_structure(table)
        keys = [(r.structure, HEURISTICS.index(r.heuristic)) for r in rows]
        assert keys == sorted(keys)

    def test_empty_table_empty_summary(self):
        assert summary_by_structure(CohortTable([])) == []


class TestUpset:
    def test_single_all_pass_record(self):
        counts = upset_counts(CohortTable([synth_record()]))
        assert counts["PPPP"] == 1
        assert sum(counts.values()) == 1

    def test_keys_are_all_16_combinations(self):
        counts = upset_counts(CohortTable([]))
        assert tuple(counts) == UPSET_COMBINATIONS
        assert len(counts) == 16

    def test_bit_order_completeness_connected_laterality_minvolume(self):
        record = synth_record(completeness=False, laterality_pass="fail")
        counts = upset_counts(CohortTable([record]))
        assert counts["FPFP"] == 1

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=40)
    def test_partition_sums_to_record_count(self, seed):
        rng = np.random.default_rng(seed)
        table = random_table(rng)
        scoped = apply_filters(table, random_filter(rng))
        counts = upset_counts(scoped)
        assert sum(counts.values()) == len(scoped)


class TestWithinPatientSd:
    def test_constant_volumes_zero_sd(self):
        records = [
            synth_record(series=f"R{i}", volume_ml=5.0) for i in range(3)
        ]
        assert within_patient_sd(CohortTable(records), "kidney", "left") == [0.0]

    def test_two_point_formula(self):
        records = [
            synth_record(series="R1", volume_ml=4.0),
            synth_record(series="R2", volume_ml=6.0),
        ]
        (sd,) = within_patient_sd(CohortTable(records), "kidney", "left")
        assert sd == pytest.approx(math.sqrt(2.0))

    def test_single_record_patients_excluded(self):
        records = [
            synth_record(patient="P1", series="R1"),
            synth_record(patient="P2", series="R2"),
            synth_record(patient="P2", series="R3"),
        ]
        assert len(within_patient_sd(CohortTable(records), "kidney", "left")) == 1

    def test_order_invariant(self):
        rng = np.random.default_rng(5)
        table = random_table(rng)
        sds = within_patient_sd(table, "kidney", None)
        shuffled = list(table.records)
        rng.shuffle(shuffled)
        assert within_patient_sd(CohortTable(shuffled), "kidney", None) == sds

    def test_filters_shrink_scope(self):
        records = [
            synth_record(series="R1", volume_ml=5.0),
            synth_record(series="R2", volume_ml=5.1),
            synth_record(series="R3", volume_ml=20.0, min_volume=False),
        ]
        table = CohortTable(records)
        before = within_patient_sd(table, "kidney", "left")
        after = within_patient_sd(
            table, "kidney", "left", FilterSpec(require_pass=frozenset({"minVolume"}))
        )
        assert after[0] < before[0]


class TestLrDiff:
    def make_table(self):
        records = []
        for i, (l_vol, r_vol, complete) in enumerate(
            [(10.0, 10.0, True), (12.0, 8.0, False), (9.0, 9.0, True)]
        ):
            records.append(
                synth_record(
                    patient=f"P{i % 2}", series=f"R{i}", laterality="left",
                    volume_ml=l_vol, completeness=complete,
                )
            )
            records.append(
                synth_record(
                    patient=f"P{i % 2}", series=f"R{i}", laterality="right",
                    volume_ml=r_vol, completeness=True,
                )
            )
        return CohortTable(records)

    def test_stage_zero_is_raw(self):
        stages = lr_diff_stats(self.make_table(), "kidney", [])
        assert len(stages) == 1
        assert stages[0].n == 3
        assert stages[0].mean == pytest.approx((0.0 + 0.2 + 0.0) / 3)

    def test_symmetric_series_zero_stats(self):
        records = []
        for i in range(4):
            records.append(synth_record(patient="P1", series=f"R{i}", laterality="left"))
            records.append(synth_record(patient="P1", series=f"R{i}", laterality="right"))
        stages = lr_diff_stats(CohortTable(records), "kidney", default_filter_chain())
        for stage in stages:
            assert stage.mean == 0.0
            assert stage.sd == 0.0

    def test_stages_nested(self):
        stages = lr_diff_stats(self.make_table(), "kidney", default_filter_chain())
        series_by_stage = [{s.series_id for s in stage.samples} for stage in stages]
        for earlier, later in zip(series_by_stage, series_by_stage[1:]):
            assert later <= earlier
        # the completeness stage drops the asymmetric series
        assert stages[0].n == 3
        assert stages[1].n == 2
        assert stages[1].sd < stages[0].sd

    def test_unpaired_structure_rejected(self):
        table = CohortTable([synth_record(structure="spleen", laterality="none")])
        with pytest.raises(DomainError):
            lr_diff_stats(table, "spleen", [])

    def test_series_with_missing_side_excluded(self):
        records = [
            synth_record(series="R1", laterality="left"),
            synth_record(series="R1", laterality="right"),
            synth_record(series="R2", laterality="left"),
        ]
        stages = lr_diff_stats(CohortTable(records), "kidney", [])
        assert stages[0].n == 1


class TestCompareReference:
    def make_table(self):
        records = []
        for i, structure in enumerate(["v1", "v2", "v3"]):
            for j in range(3):
                records.append(
                    synth_record(
                        patient=f"P{j}", series=f"R{i}{j}", structure=structure,
                        laterality="none", laterality_pass="na",
                        volume_ml=5.0 + 2 * i + 0.1 * j,
                    )
                )
        return CohortTable(records)

    def refs(self, means=(5.0, 7.0, 9.0)):
        return [
            ReferenceRange(f"v{i+1}", mean, 1.0, "literature") for i, mean in enumerate(means)
        ]

    def test_identical_cohort_zero_difference(self):
        records = [
            synth_record(series=f"R{i}", structure="v1", laterality="none",
                         laterality_pass="na", volume_ml=5.0)
            for i in range(3)
        ]
        rows, ordered = compare_reference(CohortTable(records), self.refs()[:1])
        assert rows[0].cohort_mean == pytest.approx(5.0)
        assert rows[0].cohort_mean - rows[0].ref_mean == pytest.approx(0.0)
        assert ordered

    def test_single_record_structure_has_no_sd(self):
        table = CohortTable(
            [synth_record(series="R0", structure="v1", laterality="none",
                          laterality_pass="na", volume_ml=5.0)]
        )
        rows, _ = compare_reference(table, self.refs()[:1])
        assert rows[0].cohort_sd is None
        assert rows[0].cohort_mean == pytest.approx(5.0)

    def test_monotone_ladder_flag(self):
        rows, ordered = compare_reference(self.make_table(), self.refs())
        assert ordered is True
        assert [r.structure for r in rows] == ["v1", "v2", "v3"]

    def test_discordant_order_flag_false(self):
        rows, ordered = compare_reference(self.make_table(), self.refs(means=(9.0, 7.0, 5.0)))
        assert ordered is False

    def test_missing_structure_omitted(self, caplog):
        refs = self.refs() + [ReferenceRange("v9", 1.0, 0.5, "literature")]
        with caplog.at_level("WARNING"):
            rows, _ = compare_reference(self.make_table(), refs)
        assert [r.structure for r in rows] == ["v1", "v2", "v3"]
        assert any("v9" in message for message in caplog.messages)

    def test_empty_refs_rejected(self):
        with pytest.raises(DomainError):
            compare_reference(self.make_table(), [])
