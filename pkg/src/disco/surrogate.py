"""Analytic stand-in for a trained detection head over synthetic scenes.

Instead of extracting learned features, the surrogate scores a box by
how well it overlaps the true object (IoU raised to a sharpness
exponent, plus optional Gaussian noise, clamped to [0, 1]) and
"regresses" a box by pulling its center and size a fixed fraction of
the way toward the true object. Both honor the one assumption the
calibration loop rests on, that classification scores track
localization quality, while the exponent, noise level, and pull
fraction act as knobs to stress the loop under miscalibration.

Scenes are flat value objects: per-object clean boxes with category
labels plus the noisy boxes produced by the annotation-noise model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from disco.distribution import SpatialDistribution
from disco.geometry import (
    _encode_from_center_size,
    _iou_arrays,
    _to_corners_arrays,
    as_box_array,
    to_center_size,
    to_corners,
    validate_corners,
)
from disco.noise import NoiseConfig, perturb_box


@dataclass(frozen=True)
class SurrogateHeadConfig:
    """Knobs of the analytic scorer/regressor.

    ``score_exponent`` sharpens the score-vs-IoU curve, ``score_noise``
    is the std of additive Gaussian score noise, ``regressor_pull`` is
    the fraction each proposal moves toward the true box (a partially
    trained regressor), and ``background_floor`` fills the non-target
    score columns.
    """

    score_exponent: float = 2.0
    score_noise: float = 0.05
    regressor_pull: float = 0.25
    background_floor: float = 0.05

    def __post_init__(self) -> None:
        if self.score_exponent <= 0:
            raise ValueError("score_exponent must be positive")
        if self.score_noise < 0:
            raise ValueError("score_noise must be non-negative")
        if not 0.0 <= self.regressor_pull <= 1.0:
            raise ValueError("regressor_pull must be in [0, 1]")
        if not 0.0 <= self.background_floor < 1.0:
            raise ValueError("background_floor must be in [0, 1)")


@dataclass
class Scene:
    """Synthetic image: aligned clean boxes, categories, and noisy boxes."""

    width: float
    height: float
    real_boxes: np.ndarray
    categories: np.ndarray
    noisy_boxes: np.ndarray
    num_categories: int

    def __post_init__(self) -> None:
        self.real_boxes = validate_corners(self.real_boxes, "real_boxes").reshape(-1, 4)
        self.noisy_boxes = validate_corners(self.noisy_boxes, "noisy_boxes").reshape(-1, 4)
        self.categories = np.asarray(self.categories, dtype=np.int64).reshape(-1)
        if not len(self.real_boxes) == len(self.noisy_boxes) == len(self.categories):
            raise ValueError("scene object lists must stay aligned")
        if self.num_categories < 1:
            raise ValueError("scenes need at least one category")
        if np.any(self.categories < 1) or np.any(self.categories > self.num_categories):
            raise ValueError("category labels must lie in 1..num_categories")

    def __len__(self) -> int:
        return len(self.real_boxes)


def _as_rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def generate_scene(
    num_objects: int,
    size: tuple[float, float],
    noise: NoiseConfig,
    rng,
    *,
    num_categories: int = 3,
    size_range: tuple[float, float] = (96.0, 128.0),
) -> Scene:
    """Random scene with clean objects fully inside the image.

    Object widths and heights are drawn uniformly from ``size_range``
    (clamped to fit the image), centers are placed so the clean box fits,
    and each noisy box comes from one independent draw of the
    annotation-noise model. Noisy boxes may exceed the image; they are
    not clipped.
    """
    if num_objects < 1:
        raise ValueError("scenes need at least one object")
    width, height = float(size[0]), float(size[1])
    if width <= 0 or height <= 0:
        raise ValueError("image size must be positive")
    gen = _as_rng(rng)
    lo, hi = size_range
    w = gen.uniform(min(lo, width), min(hi, width), num_objects)
    h = gen.uniform(min(lo, height), min(hi, height), num_objects)
    cx = gen.uniform(w / 2.0, width - w / 2.0)
    cy = gen.uniform(h / 2.0, height - h / 2.0)
    real = to_corners(np.stack([cx, cy, w, h], axis=-1))
    categories = gen.integers(1, num_categories + 1, num_objects)
    if noise.level == 0.0:
        noisy = real.copy()
    else:
        draws = gen.uniform(-noise.level, noise.level, (num_objects, 4))
        noisy = to_corners(perturb_box(np.stack([cx, cy, w, h], axis=-1), noise, draws))
    return Scene(
        width=width,
        height=height,
        real_boxes=real,
        categories=categories,
        noisy_boxes=noisy,
        num_categories=num_categories,
    )


def generate_proposals(
    scene: Scene,
    object_index: int,
    count: int,
    jitter: float,
    rng,
) -> np.ndarray:
    """The object's noisy box plus ``count - 1`` jittered copies of it.

    Jitter reuses the shift/scale form of the annotation-noise model at
    the given level, so proposal spread around the noisy box follows the
    same uniform law as the annotation noise itself.
    """
    if count < 1:
        raise ValueError("at least one proposal is required")
    base = scene.noisy_boxes[object_index]
    if count == 1 or jitter == 0.0:
        return np.tile(base, (count, 1))
    gen = _as_rng(rng)
    draws = gen.uniform(-jitter, jitter, (count - 1, 4))
    jittered = to_corners(
        perturb_box(to_center_size(base), NoiseConfig(level=jitter), draws)
    )
    return np.vstack([base[None, :], jittered])


def score_proposals(
    proposals,
    scene: Scene,
    object_index: int,
    cfg: SurrogateHeadConfig,
    rng,
) -> np.ndarray:
    """Score matrix ``(N, L+1)`` with background in column 0.

    The object's own category column holds ``clamp(IoU(p, real)**k + eta)``
    with ``eta ~ Normal(0, score_noise**2)``; every other column sits at
    the background floor.
    """
    boxes = as_box_array(proposals, "proposals").reshape(-1, 4)
    real = scene.real_boxes[object_index]
    category = int(scene.categories[object_index])
    overlap = _iou_arrays(boxes, real[None, :])
    s = overlap**cfg.score_exponent
    if cfg.score_noise > 0:
        s = s + _as_rng(rng).normal(0.0, cfg.score_noise, len(boxes))
    s = np.clip(s, 0.0, 1.0)
    matrix = np.full((len(boxes), scene.num_categories + 1), cfg.background_floor)
    matrix[:, category] = s
    return matrix


def lookup_column(scores, category: int) -> np.ndarray:
    """Extract one foreground category's score column.

    Column 0 is background and is not a valid lookup target; categories
    run 1..L.
    """
    matrix = np.asarray(scores, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] < 2:
        raise ValueError("score matrix must be (N, L+1) with at least one category")
    if not 1 <= category <= matrix.shape[1] - 1:
        raise ValueError(f"category {category} outside 1..{matrix.shape[1] - 1}")
    return matrix[:, category].copy()


def regress_proposals(
    proposals,
    scene: Scene,
    object_index: int,
    cfg: SurrogateHeadConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Predicted offsets and the boxes they decode to.

    The pull happens in center-size space, moving each of (cx, cy, w, h)
    a fraction ``regressor_pull`` toward the true object's values, which
    can never produce an inverted box.
    """
    boxes = as_box_array(proposals, "proposals").reshape(-1, 4)
    if cfg.regressor_pull == 0.0:
        return np.zeros_like(boxes), boxes.copy()
    cs = to_center_size(boxes)
    real_cs = to_center_size(scene.real_boxes[object_index])
    pulled = (1.0 - cfg.regressor_pull) * cs + cfg.regressor_pull * real_cs
    return _encode_from_center_size(cs, pulled), _to_corners_arrays(pulled)


def proposal_features(boxes, dist: SpatialDistribution) -> np.ndarray:
    """Scale-free geometric features of proposals within their group.

    Four absolute coordinate offsets from the group mean and the four
    group deviations, all normalized by the mean box's width/height.
    Doubling every coordinate of a configuration leaves them unchanged.
    """
    arr = as_box_array(boxes, "boxes")
    single = arr.ndim == 1
    arr = arr.reshape(-1, 4)
    mean_w = dist.mu[2] - dist.mu[0]
    mean_h = dist.mu[3] - dist.mu[1]
    if mean_w <= 0 or mean_h <= 0:
        raise ValueError("group mean box is degenerate; features are undefined")
    norm = np.array([mean_w, mean_h, mean_w, mean_h])
    offsets = np.abs(arr - dist.mu) / norm
    spread = np.tile(dist.sigma / norm, (len(arr), 1))
    features = np.concatenate([offsets, spread], axis=1)
    return features[0] if single else features


def scene_to_records(
    scene: Scene,
    image_id: str,
    proposals_per_object: list[np.ndarray] | None = None,
) -> list[dict]:
    """Annotation-JSON records for a scene, optionally with proposal dumps."""
    if proposals_per_object is not None and len(proposals_per_object) != len(scene):
        raise ValueError("one proposal array per object is required")
    records = []
    for k in range(len(scene)):
        obj = {
            "image_id": image_id,
            "category": int(scene.categories[k]),
            "bbox": [float(v) for v in scene.noisy_boxes[k]],
            "real_bbox": [float(v) for v in scene.real_boxes[k]],
        }
        if proposals_per_object is not None:
            obj["proposals"] = [
                [float(v) for v in row] for row in np.asarray(proposals_per_object[k])
            ]
        records.append(obj)
    return records
