"""HTTP front end: submit runs and sweeps, poll their status, run the self-checks.

Jobs live in memory and run one at a time on a single worker thread; the
numerical kernels are CPU bound, so running several at once would only
slow each of them down.
"""

from __future__ import annotations

import logging
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor

from fastapi import FastAPI, HTTPException

from ..config import apply_env
from ..pde import InstabilityError
from ..runner import ExperimentResult, run_experiment, run_sweep, run_verify
from .schemas import CheckResult, JobRequest, JobStatus, SummaryRow, VerifyResponse

log = logging.getLogger(__name__)


def _row(result: ExperimentResult, ratios=None) -> SummaryRow:
    r = result.report
    ratios = ratios or [None, None, None]
    return SummaryRow(
        level=result.level,
        h=result.h,
        dt=result.dt,
        iter_cg=r.iterations,
        max_iter_pcg=r.max_inner_overall,
        err_u=result.errors["err_u"],
        err_y=result.errors["err_y"],
        rel_misfit=result.errors["rel_misfit"],
        status=r.status,
        ratio_u_err=ratios[0],
        ratio_y_err=ratios[1],
        ratio_misfit=ratios[2],
    )


class JobStore:
    def __init__(self):
        self._jobs: dict[str, JobStatus] = {}
        self._lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=1)

    def submit(self, req: JobRequest) -> JobStatus:
        job = JobStatus(id=uuid.uuid4().hex, kind=req.kind, state="queued")
        with self._lock:
            self._jobs[job.id] = job
        self._pool.submit(self._work, job.id, req)
        return job

    def get(self, job_id: str) -> JobStatus | None:
        with self._lock:
            job = self._jobs.get(job_id)
            return None if job is None else job.model_copy()

    def _update(self, job_id: str, **changes) -> None:
        with self._lock:
            self._jobs[job_id] = self._jobs[job_id].model_copy(update=changes)

    def _work(self, job_id: str, req: JobRequest) -> None:
        self._update(job_id, state="running")
        cfg = apply_env(req.config)
        try:
            if req.kind == "sweep":
                sweep = run_sweep(cfg)
                rows = [_row(r, q) for r, q in zip(sweep.results, sweep.ratios())]
            else:
                rows = [_row(run_experiment(cfg))]
        except InstabilityError as exc:
            self._update(job_id, state="failed", error=str(exc), error_kind="instability")
        except Exception as exc:  # reported to the client, not raised in the worker
            log.exception("job %s failed", job_id)
            self._update(job_id, state="failed", error=str(exc), error_kind=type(exc).__name__)
        else:
            self._update(job_id, state="done", rows=rows)


def create_app() -> FastAPI:
    app = FastAPI(title="bilinear-cg", version="0.1.0")
    store = JobStore()
    app.state.jobs = store

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/jobs", response_model=JobStatus, status_code=202)
    def submit(req: JobRequest):
        if req.kind == "run" and req.config.level is None:
            raise HTTPException(status_code=422, detail="a run needs 'level'")
        return store.submit(req)

    @app.get("/jobs/{job_id}", response_model=JobStatus)
    def status(job_id: str):
        job = store.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no job {job_id}")
        return job

    @app.get("/verify", response_model=VerifyResponse)
    def verify():
        checks = [
            CheckResult(name=c.name, value=c.value, threshold=c.threshold, passed=c.passed)
            for c in run_verify()
        ]
        return VerifyResponse(passed=all(c.passed for c in checks), checks=checks)

    return app


app = create_app()
