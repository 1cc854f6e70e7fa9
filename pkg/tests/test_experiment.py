"""Experiment runner: config validation, reports, sweeps, determinism."""

import dataclasses
import json

import numpy as np
import pytest

from disco.experiment import (
    CSV_COLUMNS,
    ExperimentConfig,
    combine_stats,
    metrics_csv,
    report_json,
    run_experiment,
    run_trial,
    sweep_experiment,
    write_report,
    write_sweep,
)

SMALL = dict(scenes=20, seeds=(3,))


class TestExperimentConfig:
    def test_defaults_valid(self):
        cfg = ExperimentConfig()
        assert cfg.passes == 2
        assert cfg.temperature == 0.1

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            ExperimentConfig.from_dict({"scenes": 5, "bogus": 1})
        with pytest.raises(ValueError, match="unknown surrogate"):
            ExperimentConfig.from_dict({"surrogate": {"nope": 2}})

    def test_round_trip_through_dict(self):
        cfg = ExperimentConfig(scenes=7, seeds=(1, 2), jitter=0.25)
        again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert again == cfg

    def test_invalid_values_rejected(self):
        for bad in (
            dict(passes=4),
            dict(temperature=0.0),
            dict(noise_level=1.0),
            dict(jitter=1.0),
            dict(seeds=()),
            dict(min_object_size=10.0, max_object_size=5.0),
            dict(sigma_source="weird"),
            dict(workers=0),
        ):
            with pytest.raises(ValueError):
                ExperimentConfig(**bad)

    def test_execution_fields_excluded_from_report_echo(self):
        cfg = ExperimentConfig(workers=8)
        assert "workers" not in cfg.to_dict(include_execution=False)
        assert cfg.to_dict()["workers"] == 8


class TestRunTrial:
    def test_zero_scenes_empty_report(self):
        report = run_trial(ExperimentConfig(scenes=0), seed=0)
        assert report.iou_stats["iou_noisy"]["n"] == 0
        assert report.mean_iou_noisy is None
        assert report.l_cls is None and report.l_all is None
        assert report.ap50_standard_nms is None

    def test_same_seed_identical_reports(self):
        cfg = ExperimentConfig(**SMALL)
        a = run_trial(cfg, 3)
        b = run_trial(cfg, 3)
        assert a.to_dict() == b.to_dict()

    def test_report_fields_populated(self):
        report = run_trial(ExperimentConfig(**SMALL), 3)
        assert 0.0 <= report.mean_iou_noisy <= 1.0
        assert 0.0 <= report.mean_iou_final <= 1.0
        assert report.l_cls > 0 and report.l_reg >= 0 and report.l_aug >= 0
        assert report.l_all == pytest.approx(
            report.l_cls + report.l_reg + 0.3 * report.l_est + 0.1 * report.l_aug
        )
        assert 0.0 <= report.ap50_standard_nms <= 1.0
        assert 0.0 <= report.ap50_softer_nms <= 1.0
        assert report.est_val_loss > 0 and report.est_baseline_loss > 0
        assert len(report.mean_iou_per_pass) == 2

    def test_worker_count_does_not_change_results(self):
        serial = run_trial(ExperimentConfig(**SMALL, workers=1), 3)
        threaded = run_trial(ExperimentConfig(**SMALL, workers=4), 3)
        assert serial.to_dict() == threaded.to_dict()


class TestReports:
    def test_combine_stats_matches_concatenation(self):
        rng = np.random.default_rng(0)
        a, b = rng.uniform(0, 1, 40), rng.uniform(0, 1, 25)
        stat = lambda x: {"mean": float(x.mean()), "var": float(x.var()), "n": len(x)}
        pooled = combine_stats([stat(a), stat(b)])
        both = np.concatenate([a, b])
        assert pooled["mean"] == pytest.approx(both.mean())
        assert pooled["var"] == pytest.approx(both.var())
        assert pooled["n"] == 65

    def test_csv_shape_and_columns(self):
        report = run_experiment(ExperimentConfig(scenes=5, seeds=(0, 1)))
        text = metrics_csv([report])
        lines = text.strip().split("\n")
        assert lines[0] == ",".join(CSV_COLUMNS)
        assert len(lines) == 3  # header + one row per seed
        row = lines[1].split(",")
        assert row[-1] == "0"  # seed column

    def test_write_report_files(self, tmp_path):
        report = run_experiment(ExperimentConfig(scenes=5, seeds=(0,)))
        write_report(report, tmp_path / "out")
        data = json.loads((tmp_path / "out" / "report.json").read_text())
        assert data["schema"] == "disco-report/1"
        assert data["ap_interpolation"] == "all-point"
        assert "workers" not in data["config"]
        assert len(data["trials"]) == 1
        assert (tmp_path / "out" / "metrics.csv").read_text().startswith("noise_level")

    def test_report_json_value_round_trip(self):
        report = run_experiment(ExperimentConfig(scenes=4, seeds=(1,)))
        text = report_json(report)
        parsed = json.loads(text)
        assert parsed["trials"][0]["l_cls"] == report.trials[0].l_cls


class TestSweep:
    def test_noise_alias_and_rows(self, tmp_path):
        cfg = ExperimentConfig(scenes=4, seeds=(0,))
        swept = sweep_experiment(cfg, "noise", [0.1, 0.2])
        assert [value for value, _ in swept] == [0.1, 0.2]
        assert swept[0][1].config.noise_level == 0.1
        write_sweep(swept, "noise", tmp_path)
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["metrics.csv", "report_noise_level_0.1.json", "report_noise_level_0.2.json"]
        lines = (tmp_path / "metrics.csv").read_text().strip().split("\n")
        assert len(lines) == 3

    def test_unknown_field_rejected(self):
        cfg = ExperimentConfig(scenes=2, seeds=(0,))
        with pytest.raises(ValueError, match="cannot sweep"):
            sweep_experiment(cfg, "surrogate", [1])
        with pytest.raises(ValueError, match="cannot sweep"):
            sweep_experiment(cfg, "nonsense", [1])

    def test_integer_field_coercion(self):
        cfg = ExperimentConfig(scenes=2, seeds=(0,))
        swept = sweep_experiment(cfg, "passes", [1.0, 2])
        assert [r.config.passes for _, r in swept] == [1, 2]
        with pytest.raises(ValueError, match="integer"):
            sweep_experiment(cfg, "passes", [1.5])

    def test_noise_sweep_decreasing_baseline(self):
        cfg = ExperimentConfig(scenes=80, seeds=(0,), passes=1)
        swept = sweep_experiment(cfg, "noise", [0.1, 0.2, 0.3, 0.4])
        baselines = [r.aggregate["iou_noisy"]["mean"] for _, r in swept]
        assert all(b > a for a, b in zip(baselines[1:], baselines))


class TestFieldParityWithSchema:
    def test_pydantic_model_mirrors_dataclass(self):
        from disco.service.schemas import ExperimentConfigModel

        dataclass_fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
        model_fields = set(ExperimentConfigModel.model_fields)
        assert dataclass_fields == model_fields

    def test_model_defaults_match_core(self):
        from disco.service.schemas import ExperimentConfigModel

        assert ExperimentConfigModel().to_core() == ExperimentConfig()
