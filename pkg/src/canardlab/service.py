"""FastAPI service wrapping the laboratory pipeline.

Every heavy CLI subcommand has an endpoint; requests carry either an inline
configuration object or a server-side config path, plus optional overrides.
Assumption violations map to HTTP 409 so clients can distinguish "the model
does not satisfy the geometric hypotheses" from genuine failures.
"""
from __future__ import annotations

import json
from dataclasses import asdict
from typing import List, Optional

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__
from .analysis import ThresholdInputs, coupling_threshold
from .config import DEFAULT_CONFIG_TOML, ExperimentConfig, load_config
from .errors import AssumptionViolation, CanardLabError, ConfigError
from .pipeline import emit_plot_data, run_experiment, sweep_k

__all__ = ["create_app", "app"]


class RunRequest(BaseModel):
    config: Optional[dict] = None
    config_path: Optional[str] = None
    out_dir: Optional[str] = None
    seed: Optional[int] = None
    k: Optional[float] = None


class SweepRequest(RunRequest):
    grid: Optional[List[float]] = None


class PlotDataRequest(BaseModel):
    artifact_dir: str
    kind: str
    out_path: Optional[str] = None


class ThresholdRequest(BaseModel):
    het_bound: float = Field(ge=0)
    eps_tol: float = Field(gt=0)
    delta: float = Field(gt=0, le=1)
    t_min: float = Field(gt=0)
    w0: float = Field(ge=0)


class ThresholdResponse(BaseModel):
    k_star: float
    steady_term: float
    transient_term: float
    transient_floored: bool


class HealthResponse(BaseModel):
    status: str
    version: str


class RunResponse(BaseModel):
    status: str
    out_dir: str
    manifest: dict
    linger: Optional[dict] = None
    verification: Optional[dict] = None


class SweepResponse(BaseModel):
    status: str
    out_dir: str
    table: dict


class PlotDataResponse(BaseModel):
    status: str
    path: str


def _resolve_config(req: RunRequest) -> ExperimentConfig:
    if (req.config is None) == (req.config_path is None):
        raise ConfigError("provide exactly one of 'config' or 'config_path'")
    cfg = load_config(req.config if req.config is not None else req.config_path)
    overrides = {}
    if req.seed is not None:
        overrides["model__seed"] = int(req.seed)
    if req.k is not None:
        overrides["network__k"] = float(req.k)
    return cfg.replace(**overrides) if overrides else cfg


def _run_payload(artifact, status="ok") -> dict:
    linger = None
    if artifact.linger_report is not None:
        linger = json.loads(artifact.linger_report.to_json())
    verification = None
    if artifact.verification is not None:
        verification = asdict(artifact.verification)
        verification["passed"] = artifact.verification.passed
    return {
        "status": status,
        "out_dir": str(artifact.out_dir),
        "manifest": artifact.manifest,
        "linger": linger,
        "verification": verification,
    }


def create_app() -> FastAPI:
    app = FastAPI(title="canardlab", version=__version__,
                  description="Numerical laboratory for coupled "
                              "three-time-scale oscillator networks")

    @app.exception_handler(AssumptionViolation)
    async def _assumption(request, exc):
        return JSONResponse(status_code=409, content={
            "status": "assumption-violation", "detail": str(exc)})

    @app.exception_handler(ConfigError)
    async def _config(request, exc):
        return JSONResponse(status_code=422, content={
            "status": "error", "detail": str(exc)})

    @app.exception_handler(CanardLabError)
    async def _generic(request, exc):
        return JSONResponse(status_code=400, content={
            "status": "error", "detail": str(exc)})

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.get("/config/default")
    def default_config():
        return {"toml": DEFAULT_CONFIG_TOML,
                "canonical": ExperimentConfig().to_canonical_dict()}

    @app.post("/threshold", response_model=ThresholdResponse)
    def threshold(req: ThresholdRequest):
        inputs = ThresholdInputs(req.het_bound, req.eps_tol, req.delta,
                                 req.t_min, req.w0)
        sq = float(np.sqrt(req.eps_tol))
        steady = 2.0 * req.het_bound / sq
        raw = (float(np.log(2.0 * req.w0 / sq)) / (req.delta * req.t_min)
               if req.w0 > 0 else 0.0)
        return ThresholdResponse(k_star=coupling_threshold(inputs),
                                 steady_term=steady,
                                 transient_term=max(0.0, raw),
                                 transient_floored=bool(raw < 0.0))

    def _staged(req: RunRequest, until: str) -> RunResponse:
        cfg = _resolve_config(req)
        artifact = run_experiment(cfg, out_dir=req.out_dir, until=until)
        return RunResponse(**_run_payload(artifact))

    @app.post("/manifold", response_model=RunResponse)
    def manifold(req: RunRequest):
        return _staged(req, "manifold")

    @app.post("/linger", response_model=RunResponse)
    def linger(req: RunRequest):
        return _staged(req, "linger")

    @app.post("/simulate", response_model=RunResponse)
    def simulate(req: RunRequest):
        return _staged(req, "simulate")

    @app.post("/verify", response_model=RunResponse)
    def verify(req: RunRequest):
        return _staged(req, "verify")

    @app.post("/sweep", response_model=SweepResponse)
    def sweep(req: SweepRequest):
        cfg = _resolve_config(req)
        artifact = sweep_k(cfg, grid=req.grid, out_dir=req.out_dir)
        table = json.loads((artifact.out_dir / "sweep.json").read_text())
        return SweepResponse(status="ok", out_dir=str(artifact.out_dir),
                             table=table)

    @app.post("/plot-data", response_model=PlotDataResponse)
    def plot_data(req: PlotDataRequest):
        path = emit_plot_data(req.artifact_dir, req.kind, req.out_path)
        return PlotDataResponse(status="ok", path=str(path))

    return app


app = create_app()
