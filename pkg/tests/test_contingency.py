"""Synthetic load-manipulation dataset generation."""

import dataclasses
import math

import numpy as np
import pytest

from warmflow import (Contingency, DatasetError, GenSpec, GridError,
                      SolveOptions, apply_contingency, generate_dataset,
                      generate_sample, make_madiot, perturb_pre_case,
                      read_dataset, sample_from_record, sample_to_record,
                      split_dataset, write_dataset)
from warmflow.contingency import DATASET_FORMAT

from conftest import rng_of


class TestGenSpec:
    def test_defaults_are_valid(self):
        spec = GenSpec(n_samples=10)
        assert spec.load_scale_range == (0.95, 1.05)
        assert spec.lines_removed_range == (1, 2)
        assert spec.parameter == 2.0

    @pytest.mark.parametrize("kw", [
        {"n_samples": 0},
        {"n_samples": 5, "load_scale_range": (1.1, 0.9)},
        {"n_samples": 5, "load_scale_range": (-0.1, 1.0)},
        {"n_samples": 5, "lines_removed_range": (2, 1)},
        {"n_samples": 5, "lines_removed_range": (-1, 1)},
        {"n_samples": 5, "selection": "everything"},
        {"n_samples": 5, "selection_value": 0.0},
        {"n_samples": 5, "parameter": 0.0},
    ])
    def test_rejects_bad_values(self, kw):
        with pytest.raises((ValueError, GridError)):
            GenSpec(**kw)

    def test_dict_roundtrip(self):
        spec = GenSpec(n_samples=7, selection="top_k", selection_value=3,
                       seed=9)
        assert GenSpec.from_dict(spec.to_dict()) == spec


class TestPerturbPreCase:
    def test_deterministic(self, case14):
        spec = GenSpec(n_samples=1, seed=5)
        a = perturb_pre_case(case14, rng_of(5, 0, 0), spec)
        b = perturb_pre_case(case14, rng_of(5, 0, 0), spec)
        assert a == b

    def test_load_scales_in_range(self, case14):
        spec = GenSpec(n_samples=1)
        out = perturb_pre_case(case14, rng_of(1, 2, 0), spec)
        for base_ld, ld in zip(case14.loads, out.loads):
            ratio = ld.p / base_ld.p
            assert 0.95 <= ratio <= 1.05
            # constant power factor: q scales by the same ratio
            assert ld.q == pytest.approx(base_ld.q * ratio)

    def test_removes_one_or_two_lines(self, case14):
        spec = GenSpec(n_samples=1)
        for draw in range(8):
            out = perturb_pre_case(case14, rng_of(3, draw, 0), spec)
            removed = [i for i, (a, b) in
                       enumerate(zip(case14.branches, out.branches))
                       if a.in_service and not b.in_service]
            assert len(removed) in (1, 2)

    def test_keeps_connectivity(self, case118):
        from warmflow import validate
        spec = GenSpec(n_samples=1)
        for draw in range(10):
            out = perturb_pre_case(case118, rng_of(11, draw, 0), spec)
            assert validate(out) == []

    def test_droop_balances_load_change(self, case14):
        spec = GenSpec(n_samples=1)
        out = perturb_pre_case(case14, rng_of(2, 4, 0), spec)
        dload = sum(ld.p for ld in out.loads) - sum(ld.p for ld in case14.loads)
        dgen = (sum(g.p_set for g in out.generators)
                - sum(g.p_set for g in case14.generators))
        assert dgen == pytest.approx(dload, abs=1e-12)

    def test_infeasible_removal_count_reduced(self, two_bus):
        # the only line is a bridge: k is reduced to zero and noted
        spec = GenSpec(n_samples=1, lines_removed_range=(1, 1))
        out = perturb_pre_case(two_bus, rng_of(0, 0, 0), spec)
        assert all(br.in_service for br in out.branches)
        assert any("removals" in note for note in out.notes)


class TestMakeMadiot:
    def test_random_fraction_count(self, case14):
        spec = GenSpec(n_samples=1, selection="random_fraction",
                       selection_value=0.5)
        c = make_madiot(case14, rng_of(1, 0, 0), spec)
        assert c.kind == "madiot"
        assert c.parameter == 2.0
        assert len(c.locations) == math.ceil(0.5 * 11)

    def test_locations_are_load_buses(self, case14):
        spec = GenSpec(n_samples=1, selection_value=0.4)
        load_buses = {ld.bus for ld in case14.loads}
        for draw in range(6):
            c = make_madiot(case14, rng_of(7, draw, 0), spec)
            assert set(c.locations) <= load_buses
            assert len(set(c.locations)) == len(c.locations)

    def test_top_k_picks_largest_loads(self, case14):
        spec = GenSpec(n_samples=1, selection="top_k", selection_value=3)
        c = make_madiot(case14, rng_of(0, 0, 0), spec)
        by_size = sorted(case14.loads, key=lambda ld: (-ld.p, ld.bus))
        assert sorted(c.locations) == sorted(ld.bus for ld in by_size[:3])

    def test_top_k_clamped(self, two_bus, caplog):
        spec = GenSpec(n_samples=1, selection="top_k", selection_value=5)
        with caplog.at_level("WARNING"):
            c = make_madiot(two_bus, rng_of(0, 0, 0), spec)
        assert c.locations == (2,)
        assert any("clamp" in r.message for r in caplog.records)

    def test_deterministic(self, case14):
        spec = GenSpec(n_samples=1)
        assert (make_madiot(case14, rng_of(4, 2, 0), spec)
                == make_madiot(case14, rng_of(4, 2, 0), spec))


class TestApplyContingency:
    def test_scales_selected_loads(self, case14):
        c = Contingency(kind="madiot", locations=(2, 9), parameter=2.0)
        out = apply_contingency(case14, c)
        for base_ld, ld in zip(case14.loads, out.loads):
            factor = 2.0 if base_ld.bus in (2, 9) else 1.0
            assert ld.p == pytest.approx(base_ld.p * factor)
            assert ld.q == pytest.approx(base_ld.q * factor)

    def test_droop_compensates(self, case14):
        c = Contingency(kind="madiot", locations=(3,), parameter=2.0)
        out = apply_contingency(case14, c)
        dload = sum(ld.p for ld in out.loads) - sum(ld.p for ld in case14.loads)
        dgen = (sum(g.p_set for g in out.generators)
                - sum(g.p_set for g in case14.generators))
        assert dgen == pytest.approx(dload, abs=1e-12)

    def test_location_without_load_rejected(self, case14):
        c = Contingency(kind="madiot", locations=(7,), parameter=2.0)
        with pytest.raises(GridError, match="without in-service load"):
            apply_contingency(case14, c)

    def test_contingency_validation(self):
        with pytest.raises((ValueError, GridError)):
            Contingency(kind="madiot", locations=(), parameter=2.0)
        with pytest.raises((ValueError, GridError)):
            Contingency(kind="outage", locations=(1,), parameter=2.0)


class TestGenerate:
    def test_sample_contents(self, case14):
        sample, discards = generate_sample(case14, GenSpec(n_samples=1, seed=2), 0)
        assert sample is not None and discards == 0
        assert sample.meta.converged
        assert sample.meta.pre_iterations > 0
        assert sample.label.v_real.shape == (14,)
        # post case really applies the contingency to the pre case
        assert sample.post_case != sample.pre_case

    def test_serial_parallel_identical(self, case14):
        spec = GenSpec(n_samples=12, seed=6)
        serial, m1 = generate_dataset(case14, spec, jobs=1)
        parallel, m2 = generate_dataset(case14, spec, jobs=3)
        assert m1 == m2
        recs1 = [sample_to_record(case14, s) for s in serial]
        recs2 = [sample_to_record(case14, s) for s in parallel]
        assert recs1 == recs2

    def test_discarded_counted(self, small_dataset):
        samples, manifest = small_dataset
        assert manifest.n_samples == len(samples) == 40
        assert manifest.discarded >= 0

    def test_infeasible_spec_aborts(self, ring6):
        # 30x load manipulation cannot converge; generation must give up
        spec = GenSpec(n_samples=2, parameter=30.0, selection_value=1.0)
        with pytest.raises(DatasetError, match="infeasible"):
            generate_dataset(ring6, spec, opts=SolveOptions(max_iter=20))


class TestSplit:
    def test_sizes_and_disjoint(self, small_dataset):
        samples, _ = small_dataset
        train, val, test = split_dataset(samples, (0.8, 0.1, 0.1), seed=0)
        assert (len(train), len(val), len(test)) == (32, 4, 4)
        ids = lambda part: {s.meta.seed for part_s in [part] for s in part_s}
        all_ids = ids(train) | ids(val) | ids(test)
        assert len(all_ids) == 40

    def test_deterministic(self, small_dataset):
        samples, _ = small_dataset
        a = split_dataset(samples, (0.8, 0.1, 0.1), seed=4)
        b = split_dataset(samples, (0.8, 0.1, 0.1), seed=4)
        assert [s.meta.seed for s in a[0]] == [s.meta.seed for s in b[0]]

    def test_seed_changes_assignment(self, small_dataset):
        samples, _ = small_dataset
        a = split_dataset(samples, (0.8, 0.1, 0.1), seed=0)
        b = split_dataset(samples, (0.8, 0.1, 0.1), seed=1)
        assert ([s.meta.seed for s in a[0]] != [s.meta.seed for s in b[0]])

    def test_bad_ratios(self, small_dataset):
        samples, _ = small_dataset
        with pytest.raises((ValueError, GridError)):
            split_dataset(samples, (0.8, 0.3, 0.1), seed=0)


class TestPersistence:
    def test_record_roundtrip(self, case14, small_dataset):
        samples, _ = small_dataset
        for sample in samples[:5]:
            rec = sample_to_record(case14, sample)
            again = sample_from_record(case14, rec)
            assert sample_to_record(case14, again) == rec
            assert again.post_case == sample.post_case
            np.testing.assert_array_equal(again.label.v_real,
                                          sample.label.v_real)

    def test_write_read_roundtrip(self, tmp_path, case14, small_dataset):
        samples, manifest = small_dataset
        write_dataset(tmp_path / "ds", samples, manifest,
                      splits={"train": [0, 1], "val": [2], "test": [3]})
        got, got_manifest, got_splits = read_dataset(tmp_path / "ds")
        assert got_manifest == manifest
        assert got_splits == {"train": [0, 1], "val": [2], "test": [3]}
        assert ([sample_to_record(case14, s) for s in got]
                == [sample_to_record(case14, s) for s in samples])

    def test_write_is_byte_stable(self, tmp_path, small_dataset):
        samples, manifest = small_dataset
        for d in ("a", "b"):
            write_dataset(tmp_path / d, samples, manifest)
        for name in ("dataset.jsonl", "manifest.json"):
            assert ((tmp_path / "a" / name).read_bytes()
                    == (tmp_path / "b" / name).read_bytes())

    def test_unsupported_format_rejected(self, tmp_path, small_dataset):
        import json
        samples, manifest = small_dataset
        write_dataset(tmp_path / "ds", samples, manifest)
        mpath = tmp_path / "ds" / "manifest.json"
        doc = json.loads(mpath.read_text())
        doc["format"] = DATASET_FORMAT + 1
        mpath.write_text(json.dumps(doc))
        with pytest.raises(DatasetError, match="format"):
            read_dataset(tmp_path / "ds")

    def test_missing_manifest_rejected(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(DatasetError):
            read_dataset(tmp_path / "empty")
