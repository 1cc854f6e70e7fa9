"""Experiment orchestration: deterministic trials, reports, and sweeps.

A trial runs every scene of an experiment (optionally across worker
threads, with per-scene RNG streams keyed by ``(seed, scene index)`` so
results never depend on scheduling), then trains the confidence
estimator on the collected feature/target pairs behind a phase barrier,
and finally evaluates the detection candidates under both suppression
variants. Reports aggregate in scene-index order, which makes
``report.json`` byte-identical for a given config and seed regardless
of the worker count.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from disco.calibration import FusionConfig
from disco.diagnostics import Diagnostics
from disco.estimation import (
    Detection,
    LinearEstimator,
    _greedy_clusters,
    train_estimator,
    variance_voted_boxes,
)
from disco.metrics import evaluate_ap50
from disco.noise import NoiseConfig
from disco.pipeline import SceneResult, run_disco_iteration, total_loss
from disco.surrogate import Scene, SurrogateHeadConfig, generate_scene

# Every fifth proposal group is held out to validate the estimator.
VALIDATION_STRIDE = 5

CSV_COLUMNS = [
    "noise_level",
    "passes",
    "mean_iou_noisy",
    "mean_iou_pass1",
    "mean_iou_pass2",
    "l_cls",
    "l_reg",
    "l_est",
    "l_aug",
    "l_all",
    "ap50_standard_nms",
    "ap50_softer_nms",
    "est_val_loss",
    "seed",
]

SWEEP_ALIASES = {"noise": "noise_level"}


@dataclass(frozen=True)
class EstimatorTrainConfig:
    """SGD settings for the confidence estimator."""

    learning_rate: float = 20.0
    steps: int = 8000
    batch_size: int = 256

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


@dataclass(frozen=True)
class ExperimentConfig:
    """Full parameter set of one simulation experiment.

    Defaults follow the highest-noise operating point: temperature 0.1,
    ten augmented proposals, fusion exponent 5 capped at 0.8, and loss
    weights 0.3/0.1 for the estimator and augmentation terms.
    """

    temperature: float = 0.1
    num_augmented: int = 10
    fusion_alpha: float = 5.0
    fusion_beta: float = 0.8
    est_weight: float = 0.3
    aug_weight: float = 0.1
    noise_level: float = 0.4
    scenes: int = 200
    objects_per_scene: int = 3
    proposals_per_object: int = 32
    jitter: float = 0.3
    passes: int = 2
    assign_iou: float = 0.5
    nms_iou: float = 0.5
    nms_score_threshold: float = 0.0
    seeds: tuple[int, ...] = (0,)
    image_width: float = 640.0
    image_height: float = 480.0
    num_categories: int = 3
    min_object_size: float = 96.0
    max_object_size: float = 128.0
    workers: int = 1
    force_phi_zero: bool = False
    sigma_source: str = "original"
    surrogate: SurrogateHeadConfig = field(default_factory=SurrogateHeadConfig)
    estimator: EstimatorTrainConfig = field(default_factory=EstimatorTrainConfig)

    def __post_init__(self) -> None:
        FusionConfig(alpha=self.fusion_alpha, beta=self.fusion_beta)
        NoiseConfig(level=self.noise_level)
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.num_augmented < 0:
            raise ValueError("num_augmented must be non-negative")
        if self.est_weight < 0 or self.aug_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if self.scenes < 0:
            raise ValueError("scenes must be non-negative")
        if self.objects_per_scene < 1:
            raise ValueError("objects_per_scene must be at least 1")
        if self.proposals_per_object < 1:
            raise ValueError("proposals_per_object must be at least 1")
        if not 0.0 <= self.jitter < 1.0:
            raise ValueError("jitter must be in [0, 1)")
        if self.passes not in (1, 2, 3):
            raise ValueError("passes must be 1, 2, or 3")
        if not 0.0 < self.assign_iou <= 1.0:
            raise ValueError("assign_iou must be in (0, 1]")
        if not 0.0 < self.nms_iou < 1.0:
            raise ValueError("nms_iou must be in (0, 1)")
        if not 0.0 <= self.nms_score_threshold <= 1.0:
            raise ValueError("nms_score_threshold must be in [0, 1]")
        if len(self.seeds) == 0:
            raise ValueError("at least one seed is required")
        if any(int(s) < 0 for s in self.seeds):
            raise ValueError("seeds must be non-negative")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError("image size must be positive")
        if self.num_categories < 1:
            raise ValueError("num_categories must be at least 1")
        if not 0 < self.min_object_size <= self.max_object_size:
            raise ValueError("object size range must satisfy 0 < min <= max")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.sigma_source not in ("updated", "original"):
            raise ValueError("sigma_source must be 'updated' or 'original'")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        """Build from a plain JSON document, rejecting unknown keys."""
        if not isinstance(data, dict):
            raise ValueError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        kwargs = dict(data)
        for key, sub_cls in (("surrogate", SurrogateHeadConfig), ("estimator", EstimatorTrainConfig)):
            if key in kwargs and not isinstance(kwargs[key], sub_cls):
                sub = kwargs[key]
                if not isinstance(sub, dict):
                    raise ValueError(f"{key} must be a JSON object")
                sub_known = {f.name for f in fields(sub_cls)}
                sub_unknown = sorted(set(sub) - sub_known)
                if sub_unknown:
                    raise ValueError(f"unknown {key} config keys: {sub_unknown}")
                kwargs[key] = sub_cls(**sub)
        if "seeds" in kwargs:
            kwargs["seeds"] = tuple(int(s) for s in kwargs["seeds"])
        return cls(**kwargs)

    def to_dict(self, *, include_execution: bool = True) -> dict:
        """Plain JSON form; ``include_execution=False`` drops fields like
        ``workers`` that affect scheduling but never results."""
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in ("surrogate", "estimator"):
                out[f.name] = {
                    sub.name: getattr(value, sub.name) for sub in fields(type(value))
                }
            elif f.name == "seeds":
                out[f.name] = [int(s) for s in value]
            else:
                out[f.name] = value
        if not include_execution:
            out.pop("workers")
        return out


@dataclass
class TrialReport:
    """Aggregated metrics of one seeded trial."""

    seed: int
    noise_level: float
    passes: int
    iou_stats: dict
    mean_iou_per_pass: list
    l_cls: float | None
    l_reg: float | None
    l_est: float | None
    l_aug: float | None
    l_all: float | None
    ap50_standard_nms: float | None
    ap50_softer_nms: float | None
    est_val_loss: float | None
    est_baseline_loss: float | None
    counters: dict

    @property
    def mean_iou_noisy(self):
        return self.iou_stats["iou_noisy"]["mean"]

    @property
    def mean_iou_pass1(self):
        return self.iou_stats["iou_pass1"]["mean"]

    @property
    def mean_iou_final(self):
        return self.iou_stats["iou_final"]["mean"]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "noise_level": self.noise_level,
            "passes": self.passes,
            "iou_stats": self.iou_stats,
            "mean_iou_per_pass": self.mean_iou_per_pass,
            "l_cls": self.l_cls,
            "l_reg": self.l_reg,
            "l_est": self.l_est,
            "l_aug": self.l_aug,
            "l_all": self.l_all,
            "ap50_standard_nms": self.ap50_standard_nms,
            "ap50_softer_nms": self.ap50_softer_nms,
            "est_val_loss": self.est_val_loss,
            "est_baseline_loss": self.est_baseline_loss,
            "counters": self.counters,
        }


@dataclass
class ExperimentReport:
    """All trial reports of an experiment plus exactly pooled aggregates."""

    config: ExperimentConfig
    trials: list[TrialReport]
    aggregate: dict


def _stat(values: np.ndarray) -> dict:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return {"mean": None, "var": None, "n": 0}
    return {"mean": float(values.mean()), "var": float(values.var()), "n": int(values.size)}


def combine_stats(parts: list[dict]) -> dict:
    """Pool mean/var/n summaries as if computed over the concatenated samples."""
    total = sum(p["n"] for p in parts)
    if total == 0:
        return {"mean": None, "var": None, "n": 0}
    mean = sum(p["n"] * p["mean"] for p in parts if p["n"]) / total
    second = sum(p["n"] * (p["var"] + p["mean"] ** 2) for p in parts if p["n"]) / total
    return {"mean": float(mean), "var": float(max(second - mean**2, 0.0)), "n": int(total)}


def standard_error(stat: dict) -> float | None:
    if not stat["n"]:
        return None
    return float(np.sqrt(stat["var"] / stat["n"]))


def _scene_job(cfg: ExperimentConfig, seed: int, index: int) -> tuple[Scene, SceneResult]:
    scene = generate_scene(
        cfg.objects_per_scene,
        (cfg.image_width, cfg.image_height),
        NoiseConfig(level=cfg.noise_level, seed=seed),
        np.random.default_rng([seed, index, 0]),
        num_categories=cfg.num_categories,
        size_range=(cfg.min_object_size, cfg.max_object_size),
    )
    result = run_disco_iteration(scene, cfg, np.random.default_rng([seed, index, 1]))
    return scene, result


def _group_mean_losses(predictions, targets, group_sizes) -> np.ndarray:
    """Per-group mean of the summed per-border L1 error."""
    per_sample = np.abs(predictions - targets).sum(axis=1)
    offsets = np.concatenate([[0], np.cumsum(group_sizes)[:-1]]).astype(int)
    return np.add.reduceat(per_sample, offsets) / np.asarray(group_sizes)


def run_trial(cfg: ExperimentConfig, seed: int) -> TrialReport:
    """Run all scenes for one seed and aggregate a report."""
    indices = list(range(cfg.scenes))
    if cfg.workers > 1 and cfg.scenes > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            pairs = list(pool.map(lambda i: _scene_job(cfg, seed, i), indices))
    else:
        pairs = [_scene_job(cfg, seed, i) for i in indices]
    scenes = [scene for scene, _ in pairs]
    results = [result for _, result in pairs]

    diagnostics = Diagnostics()
    for result in results:
        diagnostics.merge(result.diagnostics)
        diagnostics.bump("objects_skipped", result.objects_skipped)

    iou_noisy = (
        np.concatenate([r.iou_noisy for r in results]) if results else np.zeros(0)
    )
    per_pass = [
        np.concatenate([r.iou_passes[p] for r in results]) if results else np.zeros(0)
        for p in range(cfg.passes)
    ]
    iou_pass1 = per_pass[0] if per_pass else np.zeros(0)
    iou_final = per_pass[-1] if per_pass else np.zeros(0)

    cls_count = sum(r.cls_count for r in results)
    group_count = sum(r.group_count for r in results)
    l_cls = (
        float(sum(r.cls_neglog_sum for r in results) / cls_count) if cls_count else None
    )
    l_reg = (
        float(sum(r.reg_sum for r in results) / group_count) if group_count else None
    )
    l_aug = (
        float(sum(r.aug_neglog_sum for r in results) / group_count)
        if group_count
        else None
    )

    l_est = est_val_loss = est_baseline_loss = None
    ap_standard = ap_softer = None
    if group_count:
        features = np.vstack([r.features for r in results if len(r.features)])
        targets = np.vstack([r.targets for r in results if len(r.targets)])
        group_sizes = np.array(
            [size for r in results for size in r.group_sizes], dtype=int
        )
        group_ids = np.repeat(np.arange(group_count), group_sizes)
        val_groups = (np.arange(group_count) % VALIDATION_STRIDE) == VALIDATION_STRIDE - 1
        val_mask = val_groups[group_ids]

        estimator = LinearEstimator.init(
            np.random.default_rng([seed, 0, 2]),
            learning_rate=cfg.estimator.learning_rate,
        )
        train_features = features[~val_mask] if (~val_mask).any() else features
        train_targets = targets[~val_mask] if (~val_mask).any() else targets
        if cfg.estimator.steps > 0:
            estimator = train_estimator(
                estimator,
                train_features,
                train_targets,
                steps=cfg.estimator.steps,
                batch_size=cfg.estimator.batch_size,
                rng=np.random.default_rng([seed, 0, 3]),
            )

        predictions = estimator.predict(features)
        group_losses = _group_mean_losses(predictions, targets, group_sizes)
        l_est = float(group_losses.mean())
        if val_groups.any():
            est_val_loss = float(group_losses[val_groups].mean())
            constant = train_targets.mean(axis=0)
            baseline = _group_mean_losses(
                np.tile(constant, (len(targets), 1)), targets, group_sizes
            )
            est_baseline_loss = float(baseline[val_groups].mean())

        variances = np.maximum(
            np.vstack([estimator.predict(r.det_features) for r in results if len(r.det_features)]),
            0.0,
        )
        ap_standard, ap_softer = _evaluate_nms(cfg, scenes, results, variances)

    l_all = None
    if None not in (l_cls, l_reg, l_est, l_aug):
        l_all = total_loss(l_cls, l_reg, l_est, l_aug, cfg.est_weight, cfg.aug_weight)

    diff = iou_final - iou_pass1 if iou_final.size else np.zeros(0)
    iou_stats = {
        "iou_noisy": _stat(iou_noisy),
        "iou_pass1": _stat(iou_pass1),
        "iou_final": _stat(iou_final),
        "iou_diff_final_pass1": _stat(diff),
    }
    return TrialReport(
        seed=int(seed),
        noise_level=cfg.noise_level,
        passes=cfg.passes,
        iou_stats=iou_stats,
        mean_iou_per_pass=[_stat(p)["mean"] for p in per_pass],
        l_cls=l_cls,
        l_reg=l_reg,
        l_est=l_est,
        l_aug=l_aug,
        l_all=l_all,
        ap50_standard_nms=ap_standard,
        ap50_softer_nms=ap_softer,
        est_val_loss=est_val_loss,
        est_baseline_loss=est_baseline_loss,
        counters=diagnostics.as_dict(),
    )


def _evaluate_nms(cfg, scenes, results, variances):
    """Run both suppression variants per scene and category, then score AP."""
    standard_by_scene: list[list[Detection]] = []
    softer_by_scene: list[list[Detection]] = []
    offset = 0
    for scene, result in zip(scenes, results):
        count = len(result.det_scores)
        boxes = result.det_boxes
        scores = result.det_scores
        categories = result.det_categories
        det_vars = variances[offset : offset + count]
        offset += count
        kept_standard: list[Detection] = []
        kept_softer: list[Detection] = []
        for category in np.unique(categories):
            sel = categories == category
            sub_boxes, sub_scores, sub_vars = boxes[sel], scores[sel], det_vars[sel]
            for keep, _ in _greedy_clusters(sub_boxes, sub_scores, cfg.nms_iou):
                kept_standard.append(
                    Detection(
                        box=sub_boxes[keep],
                        score=float(sub_scores[keep]),
                        category=int(category),
                        variance=sub_vars[keep],
                    )
                )
            passing = sub_scores >= cfg.nms_score_threshold
            if passing.any():
                kept, merged = variance_voted_boxes(
                    sub_boxes[passing], sub_scores[passing], sub_vars[passing], cfg.nms_iou
                )
                kept_softer.extend(
                    Detection(
                        box=box,
                        score=float(sub_scores[passing][i]),
                        category=int(category),
                        variance=sub_vars[passing][i],
                    )
                    for i, box in zip(kept, merged)
                )
        standard_by_scene.append(kept_standard)
        softer_by_scene.append(kept_softer)
    gts = [(scene.real_boxes, scene.categories) for scene in scenes]
    return (
        evaluate_ap50(standard_by_scene, gts, iou_threshold=0.5),
        evaluate_ap50(softer_by_scene, gts, iou_threshold=0.5),
    )


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Run one trial per configured seed and pool the aggregates."""
    trials = [run_trial(cfg, seed) for seed in cfg.seeds]
    aggregate = _aggregate(trials)
    return ExperimentReport(config=cfg, trials=trials, aggregate=aggregate)


def _mean_or_none(values) -> float | None:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def _aggregate(trials: list[TrialReport]) -> dict:
    keys = ["iou_noisy", "iou_pass1", "iou_final", "iou_diff_final_pass1"]
    aggregate = {
        key: combine_stats([t.iou_stats[key] for t in trials]) for key in keys
    }
    for name in (
        "l_cls",
        "l_reg",
        "l_est",
        "l_aug",
        "l_all",
        "ap50_standard_nms",
        "ap50_softer_nms",
        "est_val_loss",
        "est_baseline_loss",
    ):
        aggregate[name] = _mean_or_none(getattr(t, name) for t in trials)
    counters = Diagnostics()
    for t in trials:
        for key, value in t.counters.items():
            counters.bump(key, value)
    aggregate["counters"] = counters.as_dict()
    return aggregate


def report_to_dict(report: ExperimentReport) -> dict:
    return {
        "schema": "disco-report/1",
        "ap_interpolation": "all-point",
        "config": report.config.to_dict(include_execution=False),
        "trials": [t.to_dict() for t in report.trials],
        "aggregate": report.aggregate,
    }


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def metrics_rows(report: ExperimentReport) -> list[dict]:
    rows = []
    for t in report.trials:
        rows.append(
            {
                "noise_level": t.noise_level,
                "passes": t.passes,
                "mean_iou_noisy": t.mean_iou_noisy,
                "mean_iou_pass1": t.mean_iou_pass1,
                "mean_iou_pass2": t.mean_iou_final,
                "l_cls": t.l_cls,
                "l_reg": t.l_reg,
                "l_est": t.l_est,
                "l_aug": t.l_aug,
                "l_all": t.l_all,
                "ap50_standard_nms": t.ap50_standard_nms,
                "ap50_softer_nms": t.ap50_softer_nms,
                "est_val_loss": t.est_val_loss,
                "seed": t.seed,
            }
        )
    return rows


def metrics_csv(reports: list[ExperimentReport]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for report in reports:
        for row in metrics_rows(report):
            lines.append(",".join(_csv_cell(row[c]) for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def report_json(report: ExperimentReport) -> str:
    return json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n"


def write_report(report: ExperimentReport, out_dir) -> None:
    """Write ``report.json`` and ``metrics.csv`` into a directory."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as handle:
        handle.write(report_json(report))
    with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8") as handle:
        handle.write(metrics_csv([report]))


def coerce_field_value(cfg: ExperimentConfig, name: str, value):
    """Cast a sweep value to the config field's type."""
    current = getattr(cfg, name)
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ValueError(f"field {name} expects a boolean")
        return value
    if isinstance(current, int):
        if float(value) != int(value):
            raise ValueError(f"field {name} expects an integer, got {value}")
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, str):
        return str(value)
    raise ValueError(f"field {name} cannot be swept")


def sweep_experiment(
    cfg: ExperimentConfig, field_name: str, values
) -> list[tuple[object, ExperimentReport]]:
    """Run the experiment once per value of one top-level config field."""
    name = SWEEP_ALIASES.get(field_name, field_name)
    sweepable = {f.name for f in fields(ExperimentConfig)} - {"surrogate", "estimator", "seeds"}
    if name not in sweepable:
        raise ValueError(f"cannot sweep field {field_name!r}")
    if not values:
        raise ValueError("sweep needs at least one value")
    out = []
    for value in values:
        coerced = coerce_field_value(cfg, name, value)
        out.append((coerced, run_experiment(replace(cfg, **{name: coerced}))))
    return out


def write_sweep(
    swept: list[tuple[object, ExperimentReport]], field_name: str, out_dir
) -> None:
    """One report file per sweep value plus a combined metrics.csv."""
    name = SWEEP_ALIASES.get(field_name, field_name)
    os.makedirs(out_dir, exist_ok=True)
    for value, report in swept:
        path = os.path.join(out_dir, f"report_{name}_{value}.json")
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(report_json(report))
    with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8") as handle:
        handle.write(metrics_csv([report for _, report in swept]))
