"""Uniform shift/scale noise applied to clean box annotations.

A noisy box is produced from a clean one by drawing four offsets from
``U(-n, n)``: the center moves by its offset times the box size and the
width/height are rescaled by ``(1 + offset)``,

    cx' = cx + dx*w,  cy' = cy + dy*h,  w' = (1 + dw)*w,  h' = (1 + dh)*h,

so a level ``n < 1`` always leaves positive sizes. Perturbed boxes are
deliberately not clipped to the image: clipping would bias the offset
distribution, so it is left to rendering code.

Each record gets its own RNG stream keyed by ``(seed, record index)``,
which makes dataset perturbation order-independent and reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from disco.geometry import to_center_size, to_corners, validate_corners


@dataclass(frozen=True)
class NoiseConfig:
    """Noise level ``n`` in [0, 1) and the master seed for draws."""

    level: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.level < 1.0:
            raise ValueError(f"noise level must be in [0, 1), got {self.level}")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")


@dataclass
class AnnotationRecord:
    """One annotated box, optionally carrying the clean box it came from."""

    image_id: str
    category: int
    box: np.ndarray
    real_box: np.ndarray | None = field(default=None)

    def __post_init__(self) -> None:
        self.box = validate_corners(self.box, "box")
        if self.box.shape != (4,):
            raise ValueError("record box must be a single box")
        if self.real_box is not None:
            self.real_box = validate_corners(self.real_box, "real_box")
        if self.category < 1:
            raise ValueError(f"category labels start at 1, got {self.category}")


def perturb_box(clean, cfg: NoiseConfig, draws) -> np.ndarray:
    """Shift and scale a center-size box using explicit uniform draws.

    ``clean`` and ``draws`` are ``(4,)`` or ``(N, 4)``; draws outside
    ``[-level, level]`` are rejected. Deterministic given the draws.
    """
    cs = np.asarray(clean, dtype=np.float64)
    d = np.asarray(draws, dtype=np.float64)
    if cs.shape[-1] != 4 or d.shape[-1] != 4:
        raise ValueError("clean box and draws must have four components")
    if np.any(cs[..., 2] <= 0) or np.any(cs[..., 3] <= 0):
        raise ValueError("clean box must have positive width and height")
    if np.any(np.abs(d) > cfg.level):
        raise ValueError(f"draws must lie within (-{cfg.level}, {cfg.level})")
    cs, d = np.broadcast_arrays(cs, d)
    return np.stack(
        [
            cs[..., 0] + d[..., 0] * cs[..., 2],
            cs[..., 1] + d[..., 1] * cs[..., 3],
            (1.0 + d[..., 2]) * cs[..., 2],
            (1.0 + d[..., 3]) * cs[..., 3],
        ],
        axis=-1,
    )


def record_stream(seed: int, index: int) -> np.random.Generator:
    """Independent per-record RNG stream keyed by (seed, record index).

    Counter-based Philox streams are independent for distinct keys by
    construction and cheap enough to create once per record.
    """
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


def perturb_dataset(records: list[AnnotationRecord], cfg: NoiseConfig) -> list[AnnotationRecord]:
    """Perturb every record's box once, preserving access to the clean box.

    Each record draws from its own stream keyed by (seed, record index),
    so output order equals input order and the result is identical for
    identical seeds regardless of scheduling or record count. Records
    that do not yet carry a ``real_box`` get their input box recorded as
    the clean one.
    """
    if not records:
        return []
    if cfg.level == 0.0:
        noisy = np.stack([rec.box for rec in records])
    else:
        draws = np.stack(
            [
                record_stream(cfg.seed, index).uniform(-cfg.level, cfg.level, 4)
                for index in range(len(records))
            ]
        )
        clean = to_center_size(np.stack([rec.box for rec in records]))
        noisy = to_corners(perturb_box(clean, cfg, draws))
    out: list[AnnotationRecord] = []
    for rec, box in zip(records, noisy):
        real = rec.real_box if rec.real_box is not None else rec.box
        out.append(
            AnnotationRecord(
                image_id=rec.image_id,
                category=rec.category,
                box=box.copy(),
                real_box=real.copy(),
            )
        )
    return out


def record_to_json(rec: AnnotationRecord) -> dict:
    obj = {
        "image_id": rec.image_id,
        "category": int(rec.category),
        "bbox": [float(v) for v in rec.box],
    }
    if rec.real_box is not None:
        obj["real_bbox"] = [float(v) for v in rec.real_box]
    return obj


def record_from_json(obj: dict) -> AnnotationRecord:
    try:
        return AnnotationRecord(
            image_id=str(obj["image_id"]),
            category=int(obj["category"]),
            box=np.asarray(obj["bbox"], dtype=np.float64),
            real_box=(
                np.asarray(obj["real_bbox"], dtype=np.float64) if "real_bbox" in obj else None
            ),
        )
    except KeyError as exc:
        raise ValueError(f"annotation record missing key {exc}") from exc


def load_annotations(path) -> list[AnnotationRecord]:
    """Read an annotation JSON array from disk."""
    with open(path, "r", encoding="utf-8") as handle:
        data = json.load(handle)
    if not isinstance(data, list):
        raise ValueError("annotation file must contain a JSON array of records")
    return [record_from_json(obj) for obj in data]


def save_annotations(records: list[AnnotationRecord], path) -> None:
    """Write records as a deterministic annotation JSON array."""
    with open(path, "w", encoding="utf-8") as handle:
        json.dump([record_to_json(r) for r in records], handle, indent=2, sort_keys=True)
        handle.write("\n")
