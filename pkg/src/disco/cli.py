"""Command-line client for the calibration harness.

Every subcommand validates its inputs through the same pydantic schemas
as the HTTP service and dispatches to the shared handlers in process;
pass ``--server http://host:port`` to send the request to a running
service instead and write its response locally.

Exit codes: 0 success, 2 config/validation error, 3 I/O error.
"""

from __future__ import annotations

import json
import os
import sys

import click
import httpx
from pydantic import ValidationError

from disco.service import handlers
from disco.service.schemas import (
    AnnotationModel,
    DetectionModel,
    ExperimentConfigModel,
    NmsRequest,
    PerturbRequest,
    SimulateRequest,
    SweepRequest,
)

CONFIG_ERROR = 2
IO_ERROR = 3


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except OSError as exc:
        _fail(IO_ERROR, f"cannot read {path}: {exc}")
    except json.JSONDecodeError as exc:
        _fail(CONFIG_ERROR, f"{path} is not valid JSON: {exc}")


def _write_text(path, text: str) -> None:
    try:
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(text)
    except OSError as exc:
        _fail(IO_ERROR, f"cannot write {path}: {exc}")


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def post_json(server: str, route: str, payload: dict) -> dict:
    """POST a request to a running service; maps HTTP failures to exit codes."""
    url = server.rstrip("/") + route
    try:
        response = httpx.post(url, json=payload, timeout=600.0)
    except httpx.HTTPError as exc:
        _fail(IO_ERROR, f"request to {url} failed: {exc}")
    if response.status_code == 422:
        _fail(CONFIG_ERROR, f"service rejected the request: {response.text}")
    if response.status_code != 200:
        _fail(IO_ERROR, f"service returned {response.status_code}: {response.text}")
    return response.json()


def _drop_none(obj: dict) -> dict:
    return {key: value for key, value in obj.items() if value is not None}


@click.group()
@click.version_option(package_name="disco-calibration")
def main() -> None:
    """Noisy bounding-box calibration harness."""


@main.command()
@click.option("--in", "in_path", required=True, help="Clean annotation JSON array.")
@click.option("--out", "out_path", required=True, help="Where to write the noisy annotations.")
@click.option("--level", required=True, type=float, help="Noise level n in [0, 1).")
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--server", default=None, help="Base URL of a running service.")
def perturb(in_path, out_path, level, seed, server):
    """Perturb every annotation box once with uniform shift/scale noise."""
    data = _read_json(in_path)
    if not isinstance(data, list):
        _fail(CONFIG_ERROR, f"{in_path} must contain a JSON array of records")
    try:
        request = PerturbRequest(
            level=level, seed=seed, records=[AnnotationModel(**obj) for obj in data]
        )
    except (ValidationError, TypeError, ValueError) as exc:
        _fail(CONFIG_ERROR, f"invalid annotations or options: {exc}")
    if server:
        response = post_json(server, "/perturb", request.model_dump())
    else:
        response = handlers.handle_perturb(request).model_dump()
    records = [_drop_none(obj) for obj in response["records"]]
    _write_text(out_path, _dump_json(records))
    click.echo(f"perturbed {len(records)} records -> {out_path}")


def _load_config(path) -> ExperimentConfigModel:
    data = _read_json(path)
    try:
        return ExperimentConfigModel(**data)
    except (ValidationError, TypeError) as exc:
        _fail(CONFIG_ERROR, f"invalid config {path}: {exc}")


@main.command()
@click.option("--config", "config_path", required=True, help="Experiment config JSON.")
@click.option("--out", "out_dir", required=True, help="Directory for report.json and metrics.csv.")
@click.option("--server", default=None, help="Base URL of a running service.")
def simulate(config_path, out_dir, server):
    """Run the experiment and write report.json plus metrics.csv."""
    request = SimulateRequest(config=_load_config(config_path))
    if server:
        response = post_json(server, "/simulate", request.model_dump())
    else:
        response = handlers.handle_simulate(request).model_dump()
    _write_text(os.path.join(out_dir, "report.json"), _dump_json(response["report"]))
    _write_text(os.path.join(out_dir, "metrics.csv"), response["metrics_csv"])
    click.echo(f"report written to {out_dir}")


def _parse_vary(vary: str):
    if "=" not in vary:
        _fail(CONFIG_ERROR, "--vary expects FIELD=v1,v2,...")
    name, _, raw = vary.partition("=")
    values = []
    for token in raw.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            values.append(json.loads(token))
        except json.JSONDecodeError:
            values.append(token)
    if not values:
        _fail(CONFIG_ERROR, "--vary needs at least one value")
    return name.strip(), values


@main.command()
@click.option("--config", "config_path", required=True, help="Experiment config JSON.")
@click.option("--vary", required=True, help="Sweep spec, e.g. noise=0.1,0.2,0.3,0.4.")
@click.option(
    "--out",
    "out_dir",
    default="sweep_report",
    show_default=True,
    help="Directory for per-value reports and the combined metrics.csv.",
)
@click.option("--server", default=None, help="Base URL of a running service.")
def sweep(config_path, vary, out_dir, server):
    """Run the experiment once per value of one config field."""
    name, values = _parse_vary(vary)
    try:
        request = SweepRequest(config=_load_config(config_path), field=name, values=values)
    except ValidationError as exc:
        _fail(CONFIG_ERROR, f"invalid sweep: {exc}")
    if server:
        response = post_json(server, "/sweep", request.model_dump())
    else:
        try:
            response = handlers.handle_sweep(request).model_dump()
        except ValueError as exc:
            _fail(CONFIG_ERROR, str(exc))
    for value, report in zip(values, response["reports"]):
        path = os.path.join(out_dir, f"report_{name}_{value}.json")
        _write_text(path, _dump_json(report))
    _write_text(os.path.join(out_dir, "metrics.csv"), response["metrics_csv"])
    click.echo(f"swept {name} over {len(values)} values -> {out_dir}")


@main.command("nms-demo")
@click.option("--in", "in_path", required=True, help="JSON array of detections.")
@click.option(
    "--mode",
    type=click.Choice(["softer", "standard"]),
    default="softer",
    show_default=True,
)
@click.option("--iou", default=0.5, type=float, show_default=True)
@click.option("--score-threshold", default=0.0, type=float, show_default=True)
@click.option("--out", "out_path", default=None, help="Output file (default: stdout).")
@click.option("--server", default=None, help="Base URL of a running service.")
def nms_demo(in_path, mode, iou, score_threshold, out_path, server):
    """Suppress a detection set and print (or write) the survivors."""
    data = _read_json(in_path)
    if not isinstance(data, list):
        _fail(CONFIG_ERROR, f"{in_path} must contain a JSON array of detections")
    try:
        request = NmsRequest(
            detections=[DetectionModel(**obj) for obj in data],
            mode=mode,
            iou_threshold=iou,
            score_threshold=score_threshold,
        )
    except (ValidationError, TypeError) as exc:
        _fail(CONFIG_ERROR, f"invalid detections or options: {exc}")
    if server:
        response = post_json(server, "/nms", request.model_dump())
    else:
        try:
            response = handlers.handle_nms(request).model_dump()
        except ValueError as exc:
            _fail(CONFIG_ERROR, str(exc))
    text = _dump_json([_drop_none(obj) for obj in response["detections"]])
    if out_path:
        _write_text(out_path, text)
        click.echo(f"kept {len(response['detections'])} detections -> {out_path}")
    else:
        click.echo(text, nl=False)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, type=int, show_default=True)
def serve(host, port):
    """Run the HTTP service with uvicorn."""
    import uvicorn

    uvicorn.run("disco.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
