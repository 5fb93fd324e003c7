"""Request/response models for the evaluation service.

Paths in requests are resolved on the host running the service; the CLI and
the service are expected to share a filesystem (the service is a local
automation daemon, not a remote job cluster).
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str


class SimulateRequest(BaseModel):
    config_path: str
    out_path: str
    records: int = Field(ge=0)
    seed: int | None = None
    shift: float = 0.0


class SimulateResponse(BaseModel):
    records_written: int
    true_value: float  # exact value of the logging policy in the simulated environment


class EvaluateRequest(BaseModel):
    logs_path: str
    config_path: str
    store_dir: str


class RunSummary(BaseModel):
    run_id: int
    status: str
    window_records: int
    best_value: float | None = None
    ci_lo: float | None = None
    ci_hi: float | None = None
    ess: float | None = None
    drift_flagged: bool | None = None


class LoopRequest(EvaluateRequest):
    max_runs: int = Field(ge=1)
    poll_millis: int = Field(default=500, ge=1)


class LoopResponse(BaseModel):
    runs: list[RunSummary]


class ErrorDetail(BaseModel):
    category: str  # "validation" or "runtime"
    message: str
