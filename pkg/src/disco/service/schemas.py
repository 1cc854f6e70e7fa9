"""Request/response models of the HTTP service.

These mirror the core dataclasses field for field (a drift test keeps
them honest) and reject unknown keys, which gives the CLI and the HTTP
surface one shared validation layer.
"""

from __future__ import annotations

from typing import Annotated, Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from disco.estimation import Detection
from disco.experiment import EstimatorTrainConfig, ExperimentConfig
from disco.noise import AnnotationRecord
from disco.surrogate import SurrogateHeadConfig


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


Box4 = Annotated[list[float], Field(min_length=4, max_length=4)]


class AnnotationModel(StrictModel):
    image_id: str
    category: int = Field(ge=1)
    bbox: Box4
    real_bbox: Box4 | None = None

    def to_core(self) -> AnnotationRecord:
        return AnnotationRecord(
            image_id=self.image_id,
            category=self.category,
            box=np.asarray(self.bbox, dtype=np.float64),
            real_box=(
                np.asarray(self.real_bbox, dtype=np.float64)
                if self.real_bbox is not None
                else None
            ),
        )

    @classmethod
    def from_core(cls, rec: AnnotationRecord) -> "AnnotationModel":
        return cls(
            image_id=rec.image_id,
            category=int(rec.category),
            bbox=[float(v) for v in rec.box],
            real_bbox=(
                [float(v) for v in rec.real_box] if rec.real_box is not None else None
            ),
        )


class PerturbRequest(StrictModel):
    level: float = Field(ge=0.0, lt=1.0)
    seed: int = Field(default=0, ge=0)
    records: list[AnnotationModel]


class PerturbResponse(StrictModel):
    records: list[AnnotationModel]


class SurrogateConfigModel(StrictModel):
    score_exponent: float = Field(default=2.0, gt=0)
    score_noise: float = Field(default=0.05, ge=0)
    regressor_pull: float = Field(default=0.25, ge=0, le=1)
    background_floor: float = Field(default=0.05, ge=0, lt=1)

    def to_core(self) -> SurrogateHeadConfig:
        return SurrogateHeadConfig(**self.model_dump())


class EstimatorConfigModel(StrictModel):
    learning_rate: float = Field(default=20.0, gt=0)
    steps: int = Field(default=8000, ge=0)
    batch_size: int = Field(default=256, ge=1)

    def to_core(self) -> EstimatorTrainConfig:
        return EstimatorTrainConfig(**self.model_dump())


class ExperimentConfigModel(StrictModel):
    temperature: float = Field(default=0.1, gt=0)
    num_augmented: int = Field(default=10, ge=0)
    fusion_alpha: float = Field(default=5.0, gt=0)
    fusion_beta: float = Field(default=0.8, gt=0, le=1)
    est_weight: float = Field(default=0.3, ge=0)
    aug_weight: float = Field(default=0.1, ge=0)
    noise_level: float = Field(default=0.4, ge=0, lt=1)
    scenes: int = Field(default=200, ge=0)
    objects_per_scene: int = Field(default=3, ge=1)
    proposals_per_object: int = Field(default=32, ge=1)
    jitter: float = Field(default=0.3, ge=0, lt=1)
    passes: Literal[1, 2, 3] = 2
    assign_iou: float = Field(default=0.5, gt=0, le=1)
    nms_iou: float = Field(default=0.5, gt=0, lt=1)
    nms_score_threshold: float = Field(default=0.0, ge=0, le=1)
    seeds: list[int] = Field(default=[0], min_length=1)
    image_width: float = Field(default=640.0, gt=0)
    image_height: float = Field(default=480.0, gt=0)
    num_categories: int = Field(default=3, ge=1)
    min_object_size: float = Field(default=96.0, gt=0)
    max_object_size: float = Field(default=128.0, gt=0)
    workers: int = Field(default=1, ge=1)
    force_phi_zero: bool = False
    sigma_source: Literal["updated", "original"] = "original"
    surrogate: SurrogateConfigModel = Field(default_factory=SurrogateConfigModel)
    estimator: EstimatorConfigModel = Field(default_factory=EstimatorConfigModel)

    @field_validator("seeds")
    @classmethod
    def _seeds_non_negative(cls, seeds: list[int]) -> list[int]:
        if any(s < 0 for s in seeds):
            raise ValueError("seeds must be non-negative")
        return seeds

    def to_core(self) -> ExperimentConfig:
        data = self.model_dump()
        data["surrogate"] = self.surrogate.to_core()
        data["estimator"] = self.estimator.to_core()
        data["seeds"] = tuple(self.seeds)
        return ExperimentConfig(**data)


class SimulateRequest(StrictModel):
    config: ExperimentConfigModel = Field(default_factory=ExperimentConfigModel)


class SimulateResponse(StrictModel):
    report: dict[str, Any]
    metrics_csv: str


class SweepRequest(StrictModel):
    config: ExperimentConfigModel = Field(default_factory=ExperimentConfigModel)
    field: str
    values: list[float | int | bool | str] = Field(min_length=1)


class SweepResponse(StrictModel):
    reports: list[dict[str, Any]]
    metrics_csv: str


class DetectionModel(StrictModel):
    bbox: Box4
    score: float = Field(ge=0.0, le=1.0)
    var: Box4 | None = None
    category: int = 0

    @field_validator("var")
    @classmethod
    def _var_non_negative(cls, var: list[float] | None) -> list[float] | None:
        if var is not None and any(v < 0 for v in var):
            raise ValueError("variances must be non-negative")
        return var

    def to_core(self) -> Detection:
        return Detection(
            box=np.asarray(self.bbox, dtype=np.float64),
            score=self.score,
            category=self.category,
            variance=(
                np.asarray(self.var, dtype=np.float64) if self.var is not None else None
            ),
        )

    @classmethod
    def from_core(cls, det: Detection) -> "DetectionModel":
        return cls(
            bbox=[float(v) for v in det.box],
            score=float(det.score),
            var=([float(v) for v in det.variance] if det.variance is not None else None),
            category=int(det.category),
        )


class NmsRequest(StrictModel):
    detections: list[DetectionModel]
    mode: Literal["softer", "standard"] = "softer"
    iou_threshold: float = Field(default=0.5, gt=0, lt=1)
    score_threshold: float = Field(default=0.0, ge=0, le=1)


class NmsResponse(StrictModel):
    detections: list[DetectionModel]


class HealthResponse(StrictModel):
    status: str
    version: str
