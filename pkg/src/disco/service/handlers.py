"""Shared request handlers behind both the HTTP routes and the CLI."""

from __future__ import annotations

from disco.estimation import softer_nms, standard_nms
from disco.experiment import (
    metrics_csv,
    report_to_dict,
    run_experiment,
    sweep_experiment,
)
from disco.noise import NoiseConfig, perturb_dataset
from disco.service.schemas import (
    AnnotationModel,
    DetectionModel,
    NmsRequest,
    NmsResponse,
    PerturbRequest,
    PerturbResponse,
    SimulateRequest,
    SimulateResponse,
    SweepRequest,
    SweepResponse,
)


def handle_perturb(request: PerturbRequest) -> PerturbResponse:
    records = [r.to_core() for r in request.records]
    noisy = perturb_dataset(records, NoiseConfig(level=request.level, seed=request.seed))
    return PerturbResponse(records=[AnnotationModel.from_core(r) for r in noisy])


def handle_simulate(request: SimulateRequest) -> SimulateResponse:
    report = run_experiment(request.config.to_core())
    return SimulateResponse(report=report_to_dict(report), metrics_csv=metrics_csv([report]))


def handle_sweep(request: SweepRequest) -> SweepResponse:
    swept = sweep_experiment(request.config.to_core(), request.field, request.values)
    return SweepResponse(
        reports=[report_to_dict(report) for _, report in swept],
        metrics_csv=metrics_csv([report for _, report in swept]),
    )


def handle_nms(request: NmsRequest) -> NmsResponse:
    detections = [d.to_core() for d in request.detections]
    if request.mode == "softer":
        if any(d.variance is None for d in detections):
            raise ValueError("softer mode needs a 'var' entry on every detection")
        kept = softer_nms(detections, request.iou_threshold, request.score_threshold)
    else:
        kept = standard_nms(
            [d for d in detections if d.score >= request.score_threshold],
            request.iou_threshold,
        )
    return NmsResponse(detections=[DetectionModel.from_core(d) for d in kept])
