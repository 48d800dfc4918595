from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field

from ..config import ExperimentConfig


class JobRequest(BaseModel):
    kind: Literal["run", "sweep"] = "run"
    config: ExperimentConfig


class SummaryRow(BaseModel):
    level: int
    h: float
    dt: float
    iter_cg: int = Field(..., description="outer CG iterations")
    max_iter_pcg: int = Field(..., description="largest inner PCG count over the run")
    err_u: float
    err_y: float
    rel_misfit: float
    status: str
    ratio_u_err: Optional[float] = None
    ratio_y_err: Optional[float] = None
    ratio_misfit: Optional[float] = None


class JobStatus(BaseModel):
    id: str
    kind: Literal["run", "sweep"]
    state: Literal["queued", "running", "done", "failed"]
    error: Optional[str] = None
    error_kind: Optional[str] = None
    rows: list[SummaryRow] = Field(default_factory=list)


class CheckResult(BaseModel):
    name: str
    value: float
    threshold: float
    passed: bool


class VerifyResponse(BaseModel):
    passed: bool
    checks: list[CheckResult]
