"""FastAPI service wrapping the evaluation engine.

Endpoints mirror the workflow: simulate feedback logs, run one evaluation,
run the periodic loop, fetch the cross-run report. Domain validation errors
map to 400 with a ``{"category": "validation"}`` detail; store/runtime
failures map to 500 with ``{"category": "runtime"}``.
"""

from __future__ import annotations

import dataclasses
from contextlib import contextmanager

from fastapi import FastAPI, HTTPException, Query, Response

from .. import __version__
from ..banditsim import SimConfig, generate_logs, shift_rewards, true_value
from ..logstore import write_jsonl
from ..orchestrator import (
    EvaluationRun,
    ProgramConfig,
    RunStore,
    StoreError,
    report,
    run_loop,
    run_once,
)
from ..logstore import ingest
from .schemas import (
    EvaluateRequest,
    HealthResponse,
    LoopRequest,
    LoopResponse,
    RunSummary,
    SimulateRequest,
    SimulateResponse,
)


@contextmanager
def _translated_errors():
    try:
        yield
    except HTTPException:
        raise
    except FileNotFoundError as exc:
        raise HTTPException(status_code=400, detail={"category": "validation", "message": str(exc)})
    except (ValueError, KeyError, TypeError) as exc:
        raise HTTPException(status_code=400, detail={"category": "validation", "message": str(exc)})
    except StoreError as exc:
        raise HTTPException(status_code=500, detail={"category": "runtime", "message": str(exc)})
    except OSError as exc:
        raise HTTPException(status_code=500, detail={"category": "runtime", "message": str(exc)})


def _summarize(run: EvaluationRun) -> RunSummary:
    best = None if run.search is None else run.search.best_estimate
    return RunSummary(
        run_id=run.run_id,
        status=run.status,
        window_records=run.window_digest.count,
        best_value=None if best is None else best.value,
        ci_lo=None if best is None else best.ci_lo,
        ci_hi=None if best is None else best.ci_hi,
        ess=None if best is None else best.ess,
        drift_flagged=None if run.drift is None else run.drift.flagged,
    )


def create_app() -> FastAPI:
    app = FastAPI(title="offab", version=__version__)

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok")

    @app.post("/simulate", response_model=SimulateResponse)
    def simulate(request: SimulateRequest) -> SimulateResponse:
        with _translated_errors():
            config = SimConfig.from_json(request.config_path)
            if request.shift != 0.0:
                config = shift_rewards(config, request.shift)
            if request.seed is not None:
                config = dataclasses.replace(config, seed=request.seed)
            dataset = generate_logs(config, request.records)
            write_jsonl(dataset, request.out_path)
            return SimulateResponse(
                records_written=len(dataset),
                true_value=true_value(config, config.logging_policy),
            )

    @app.post("/evaluate", response_model=RunSummary)
    def evaluate(request: EvaluateRequest) -> RunSummary:
        with _translated_errors():
            config = ProgramConfig.from_json(request.config_path)
            logs = ingest(request.logs_path)
            run = run_once(config, RunStore(request.store_dir), logs)
            return _summarize(run)

    @app.post("/loop", response_model=LoopResponse)
    def loop(request: LoopRequest) -> LoopResponse:
        with _translated_errors():
            config = ProgramConfig.from_json(request.config_path)
            runs = run_loop(
                config,
                RunStore(request.store_dir),
                request.logs_path,
                max_runs=request.max_runs,
                poll_millis=request.poll_millis,
            )
            return LoopResponse(runs=[_summarize(run) for run in runs])

    @app.get("/report")
    def get_report(
        store_dir: str,
        format: str = Query(default="markdown", pattern="^(json|markdown)$"),
    ) -> Response:
        with _translated_errors():
            document = report(RunStore(store_dir), fmt=format)
            media = "application/json" if format == "json" else "text/markdown"
            return Response(content=document, media_type=media)

    return app


app = create_app()
