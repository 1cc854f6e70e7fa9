"""Annotation-noise model: the shift/scale perturbation and dataset pass."""

import json

import numpy as np
import pytest
from scipy import stats

import oracles
from disco.noise import (
    AnnotationRecord,
    NoiseConfig,
    load_annotations,
    perturb_box,
    perturb_dataset,
    record_to_json,
    save_annotations,
)


def make_records(n, rng):
    records = []
    for i in range(n):
        x1, y1 = rng.uniform(0, 400, 2)
        w, h = rng.uniform(5, 100, 2)
        records.append(
            AnnotationRecord(
                image_id=f"img{i}", category=1 + i % 3, box=np.array([x1, y1, x1 + w, y1 + h])
            )
        )
    return records


class TestNoiseConfig:
    def test_level_range_enforced(self):
        with pytest.raises(ValueError):
            NoiseConfig(level=1.0)
        with pytest.raises(ValueError):
            NoiseConfig(level=-0.1)
        NoiseConfig(level=0.0)


class TestPerturbBox:
    def test_zero_draws_identity(self):
        clean = np.array([50.0, 60.0, 10.0, 8.0])
        out = perturb_box(clean, NoiseConfig(0.4), np.zeros(4))
        np.testing.assert_array_equal(out, clean)

    def test_center_shift_hand_value(self):
        clean = (50.0, 30.0, 10.0, 8.0)
        out = perturb_box(clean, NoiseConfig(0.4), [0.4, 0, 0, 0])
        np.testing.assert_allclose(out, oracles.perturb_scalar(clean, (0.4, 0, 0, 0)))
        assert out[0] == pytest.approx(54.0)

    def test_sizes_stay_in_forced_bounds(self):
        rng = np.random.default_rng(3)
        cfg = NoiseConfig(0.4)
        for _ in range(200):
            draws = rng.uniform(-0.4, 0.4, 4)
            out = perturb_box([0.0, 0.0, 10.0, 10.0], cfg, draws)
            assert 6.0 < out[2] < 14.0 and 6.0 < out[3] < 14.0

    def test_out_of_range_draw_rejected(self):
        with pytest.raises(ValueError):
            perturb_box([0, 0, 10, 10], NoiseConfig(0.2), [0.3, 0, 0, 0])

    def test_batched(self):
        clean = np.tile([0.0, 0.0, 10.0, 10.0], (3, 1))
        draws = np.array([[0.1, 0, 0, 0], [0, 0.1, 0, 0], [0, 0, 0.1, 0]])
        out = perturb_box(clean, NoiseConfig(0.2), draws)
        assert out.shape == (3, 4)
        assert out[2, 2] == pytest.approx(11.0)


class TestPerturbDataset:
    def test_zero_level_identity(self):
        records = make_records(5, np.random.default_rng(0))
        out = perturb_dataset(records, NoiseConfig(0.0, seed=1))
        for before, after in zip(records, out):
            np.testing.assert_array_equal(before.box, after.box)
            np.testing.assert_array_equal(after.real_box, before.box)

    def test_same_seed_bit_identical(self):
        records = make_records(20, np.random.default_rng(1))
        a = perturb_dataset(records, NoiseConfig(0.4, seed=9))
        b = perturb_dataset(records, NoiseConfig(0.4, seed=9))
        for ra, rb in zip(a, b):
            np.testing.assert_array_equal(ra.box, rb.box)

    def test_real_box_preserved_when_present(self):
        real = np.array([0.0, 0.0, 10.0, 10.0])
        rec = AnnotationRecord(image_id="x", category=1, box=real + 1.0, real_box=real)
        (out,) = perturb_dataset([rec], NoiseConfig(0.3, seed=2))
        np.testing.assert_array_equal(out.real_box, real)

    def test_draw_moments_match_uniform(self):
        # Recovered offsets (cx' - cx)/w over many boxes should behave as
        # U(-n, n): mean near 0 and a plausible KS statistic.
        n = 0.4
        records = make_records(10_000, np.random.default_rng(5))
        out = perturb_dataset(records, NoiseConfig(n, seed=11))
        dx = []
        for before, after in zip(records, out):
            b = oracles.center_size_scalar(before.box)
            a = oracles.center_size_scalar(after.box)
            dx.append((a[0] - b[0]) / b[2])
        dx = np.asarray(dx)
        assert abs(dx.mean()) < 0.004
        assert np.all(np.abs(dx) <= n)
        pvalue = stats.kstest(dx, "uniform", args=(-n, 2 * n)).pvalue
        assert pvalue > 0.01


class TestAnnotationJson:
    def test_round_trip(self, tmp_path):
        records = make_records(4, np.random.default_rng(2))
        records[0].real_box = records[0].box + 2.0
        path = tmp_path / "ann.json"
        save_annotations(records, path)
        loaded = load_annotations(path)
        assert [r.image_id for r in loaded] == [r.image_id for r in records]
        np.testing.assert_allclose(loaded[0].real_box, records[0].real_box)
        assert loaded[1].real_box is None

    def test_schema_fields(self):
        rec = AnnotationRecord(image_id="a", category=2, box=np.array([0.0, 1.0, 2.0, 3.0]))
        obj = record_to_json(rec)
        assert obj == {"image_id": "a", "category": 2, "bbox": [0.0, 1.0, 2.0, 3.0]}

    def test_non_array_file_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"not": "a list"}))
        with pytest.raises(ValueError):
            load_annotations(path)

    def test_invalid_category_rejected(self):
        with pytest.raises(ValueError):
            AnnotationRecord(image_id="a", category=0, box=np.array([0.0, 0.0, 1.0, 1.0]))
