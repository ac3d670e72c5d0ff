"""Request/response models for the estimation service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class CaseInfoRequest(BaseModel):
    case_text: str


class CaseInfoResponse(BaseModel):
    n_buses: int
    n_branches: int
    in_service_branches: int
    base_mva: float
    reference_bus: int  # 1-based internal id
    external_ids: list[int]


class ValidateRequest(BaseModel):
    config: dict


class ValidateResponse(BaseModel):
    valid: bool
    errors: list[str] = Field(default_factory=list)


class RunRequest(BaseModel):
    config: dict
    case_text: str | None = None
    trials: int | None = None
    seed: int | None = None
    solvers: list[str] | None = None


class Artifact(BaseModel):
    name: str
    content: str


class RunResponse(BaseModel):
    summary: dict
    artifacts: list[Artifact]


class EstimateRequest(BaseModel):
    case_text: str
    measurements: dict  # measurement-set JSON document
    solver: dict  # same shape as a config "solvers" entry
    init: str = "flat"
    seed: int = 0


class EstimateResponse(BaseModel):
    voltage: list[list[float]]  # [re, im] per bus
    final_objective: float
    final_rmse: float | None
    iterations: int
    trace_csv: str
