"""FastAPI service exposing the pipeline and the control-law evaluator.

The CLI is a thin client of this app (in-process by default); a lab
deployment can serve it with uvicorn so several clients share one
dataset host:

    uvicorn hamshape.service:app --port 8080
"""

from __future__ import annotations

import logging
import os

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..basis import basis_from_config
from ..config import parse_config
from ..errors import HamshapeError, error_kind
from ..model import ModelParams, State
from ..optim import command_torque
from ..pipeline import run_cv, run_emg, run_fit, run_report, run_simulate
from ..shaping import ShapingSpec, control_law, matching_residual
from .schemas import (
    ControlRequest,
    ControlResponse,
    HealthResponse,
    PipelineRequest,
    PipelineResponse,
)

logger = logging.getLogger("hamshape.service")

_STATUS = {"config": 400, "data": 422, "solver": 500, "integration": 500,
           "internal": 500}


def _run(runner, request: PipelineRequest) -> PipelineResponse:
    try:
        cfg = parse_config(request.config)
        summary, files = runner(cfg)
    except HamshapeError as e:
        kind = error_kind(e)
        logger.error("%s error: %s", kind, e)
        raise HTTPException(status_code=_STATUS[kind],
                            detail={"kind": kind, "message": str(e)}) from e
    return PipelineResponse(summary=summary, files=files)


def create_app() -> FastAPI:
    level = os.environ.get("HAMSHAPE_LOG")
    if level:
        logging.getLogger("hamshape").setLevel(level.upper())

    app = FastAPI(
        title="hamshape",
        version=__version__,
        description="Energy-shaping controller synthesis and simulation "
                    "for a planar biped hip-exoskeleton model.",
    )

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/fit", response_model=PipelineResponse)
    def fit(request: PipelineRequest):
        return _run(run_fit, request)

    @app.post("/cv", response_model=PipelineResponse)
    def cv(request: PipelineRequest):
        return _run(run_cv, request)

    @app.post("/simulate", response_model=PipelineResponse)
    def simulate(request: PipelineRequest):
        return _run(run_simulate, request)

    @app.post("/emg", response_model=PipelineResponse)
    def emg(request: PipelineRequest):
        return _run(run_emg, request)

    @app.post("/report", response_model=PipelineResponse)
    def report(request: PipelineRequest):
        return _run(run_report, request)

    @app.post("/control", response_model=ControlResponse)
    def control(request: ControlRequest):
        try:
            params = (ModelParams.from_dict(request.model_params)
                      if request.model_params else ModelParams.from_anthropometry())
            basis = basis_from_config(
                {"mode": request.mode, "mirrored": request.mirrored,
                 "custom": request.custom_basis}, params)
            spec = ShapingSpec(params=params, basis=basis,
                               alpha=np.asarray(request.alpha, dtype=float))
            state = State(q=np.asarray(request.q), p=np.asarray(request.p))
            u = control_law(spec, state)
            resid = matching_residual(params, state, spec)
        except (HamshapeError, ValueError) as e:
            kind = error_kind(e) if isinstance(e, HamshapeError) else "config"
            raise HTTPException(status_code=400,
                                detail={"kind": kind, "message": str(e)}) from e
        u_cmd = None
        if request.mass is not None and request.loa is not None:
            u_cmd = [float(x) for x in
                     command_torque(u, request.mass, request.loa,
                                    request.saturation)]
        return ControlResponse(
            u_norm=[float(x) for x in u],
            u_command=u_cmd,
            matching_residual_inf=float(np.max(np.abs(resid))),
        )

    return app


app = create_app()
