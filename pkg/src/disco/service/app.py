"""FastAPI application exposing the calibration harness."""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

import disco
from disco.service import handlers
from disco.service.schemas import (
    HealthResponse,
    NmsRequest,
    NmsResponse,
    PerturbRequest,
    PerturbResponse,
    SimulateRequest,
    SimulateResponse,
    SweepRequest,
    SweepResponse,
)


def create_app() -> FastAPI:
    app = FastAPI(
        title="disco-calibration",
        description=(
            "Noisy bounding-box calibration harness: annotation perturbation, "
            "simulation runs, config sweeps, and variance-aware suppression."
        ),
        version=disco.__version__,
    )

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=disco.__version__)

    @app.post("/perturb", response_model=PerturbResponse)
    def perturb(request: PerturbRequest) -> PerturbResponse:
        return handlers.handle_perturb(request)

    @app.post("/simulate", response_model=SimulateResponse)
    def simulate(request: SimulateRequest) -> SimulateResponse:
        return handlers.handle_simulate(request)

    @app.post("/sweep", response_model=SweepResponse)
    def sweep(request: SweepRequest) -> SweepResponse:
        try:
            return handlers.handle_sweep(request)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    @app.post("/nms", response_model=NmsResponse)
    def nms(request: NmsRequest) -> NmsResponse:
        try:
            return handlers.handle_nms(request)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    return app


app = create_app()
