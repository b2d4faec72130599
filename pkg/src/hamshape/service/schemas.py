"""Pydantic request/response models of the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class PipelineRequest(BaseModel):
    """Wrapper for every pipeline endpoint: a full run-config document.

    Paths inside the config must be resolvable by the service process
    (the bundled CLI resolves them to absolute paths before sending).
    """

    config: dict


class PipelineResponse(BaseModel):
    summary: dict
    files: dict[str, str] = Field(
        description="output filename -> full text content")


class ControlRequest(BaseModel):
    """Evaluate the fitted control law at one state."""

    model_params: dict | None = None
    mode: str = "wop"
    mirrored: bool = True
    custom_basis: list = Field(default_factory=list)
    alpha: list[float]
    q: list[float] = Field(min_length=5, max_length=5)
    p: list[float] = Field(min_length=5, max_length=5)
    mass: float | None = None
    loa: float | None = None
    saturation: float = 12.8


class ControlResponse(BaseModel):
    u_norm: list[float] = Field(description="hip torque in Nm/kg (theta_l, theta_r)")
    u_command: list[float] | None = Field(
        default=None, description="delivered torque in Nm when mass/loa given")
    matching_residual_inf: float


class ErrorBody(BaseModel):
    kind: str
    message: str
