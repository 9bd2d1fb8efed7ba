"""FastAPI application: synchronous scenario/rate/solve endpoints and a
background job queue for full experiments.

Experiment jobs run on a single worker thread (solves are CPU-bound and
numpy releases little of the GIL, so one thread keeps latency predictable)
and write their files with the same writer the CLI uses — downloading a
file returns byte-identical content to a local run with the same config.
"""

from __future__ import annotations

import queue
import tempfile
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse

from .. import __version__
from ..harness import (
    RunConfig,
    SweepTuple,
    _prepare_network,
    _scenario_seed,
    config_from_mapping,
    run_experiment,
    solve_one,
    write_outputs,
)
from ..rate import UrllcParams, urllc_rate
from .schemas import (
    ExperimentFiles,
    ExperimentRequest,
    ExperimentStatus,
    HealthResponse,
    RateRequest,
    RateResponse,
    ScenarioRequest,
    ScenarioResponse,
    SolveRequest,
    SolveResponse,
)


def _config_or_422(mapping: dict) -> RunConfig:
    try:
        return config_from_mapping(dict(mapping))
    except (ValueError, TypeError) as exc:
        raise HTTPException(status_code=422, detail=str(exc))


class _JobRegistry:
    """In-process experiment jobs: one worker thread, newest-last queue."""

    def __init__(self, base_dir: Path):
        self.base_dir = base_dir
        self._jobs = {}
        self._lock = threading.Lock()
        self._queue = queue.Queue()
        self._worker = None

    def _ensure_worker(self):
        if self._worker is None or not self._worker.is_alive():
            self._worker = threading.Thread(target=self._drain, daemon=True)
            self._worker.start()

    def _drain(self):
        while True:
            job_id, cfg = self._queue.get()
            with self._lock:
                self._jobs[job_id]["state"] = "running"
            try:
                result = run_experiment(cfg)
                out_dir = self.base_dir / job_id
                written = write_outputs(result, out_dir)
                with self._lock:
                    job = self._jobs[job_id]
                    job["state"] = "done"
                    job["files"] = {name: Path(p) for name, p in written.items()}
            except Exception as exc:  # surface the failure to the poller
                with self._lock:
                    job = self._jobs[job_id]
                    job["state"] = "error"
                    job["detail"] = f"{type(exc).__name__}: {exc}"
            finally:
                self._queue.task_done()

    def submit(self, cfg: RunConfig) -> str:
        job_id = uuid.uuid4().hex
        with self._lock:
            self._jobs[job_id] = {"state": "queued", "detail": "", "files": {}}
        self._queue.put((job_id, cfg))
        self._ensure_worker()
        return job_id

    def status(self, job_id: str) -> dict:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise KeyError(job_id)
            return {
                "state": job["state"],
                "detail": job["detail"],
                "files": sorted(job["files"]),
            }

    def file_path(self, job_id: str, name: str) -> Path:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise KeyError(job_id)
            path = job["files"].get(name)
        if path is None:
            raise FileNotFoundError(name)
        return path


def create_app(work_dir=None) -> FastAPI:
    """Build the service; experiment outputs land under work_dir (a fresh
    temporary directory when omitted)."""
    base = Path(work_dir) if work_dir else Path(tempfile.mkdtemp(prefix="cfurllc-"))
    base.mkdir(parents=True, exist_ok=True)
    jobs = _JobRegistry(base)
    app = FastAPI(title="cfurllc", version=__version__)

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/scenario", response_model=ScenarioResponse)
    def scenario(req: ScenarioRequest):
        cfg = _config_or_422(req.config)
        if req.network not in ("cf", "co"):
            raise HTTPException(status_code=422, detail=f"unknown network {req.network!r}")
        if req.scenario_index < 0:
            raise HTTPException(status_code=422, detail="scenario_index must be >= 0")
        seed = _scenario_seed(cfg.seed, req.scenario_index)
        state = _prepare_network(cfg, req.network, seed, req.scenario_index)
        scen = state.scenario
        return ScenarioResponse(
            network=req.network,
            seed=seed,
            n_aps=scen.n_aps,
            n_users=scen.n_users,
            ap_positions=scen.ap_positions.tolist(),
            gu_positions=scen.gu_positions.tolist(),
            uav_positions=scen.uav_positions.tolist(),
            serving=[[int(a) for a in s] for s in scen.serving],
            user_kinds=list(scen.user_kinds),
        )

    @app.post("/rate", response_model=RateResponse)
    def rate(req: RateRequest):
        try:
            params = UrllcParams(
                bandwidth_hz=req.bandwidth_hz,
                block_len=req.block_len,
                pilot_len=req.pilot_len,
                duration_s=req.duration_s,
                error_prob=req.error_prob,
            )
            sinr = np.asarray(req.sinr, dtype=float)
            if np.any(sinr < 0):
                raise ValueError("sinr values must be >= 0")
            rates = urllc_rate(sinr, params)
        except (ValueError, TypeError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return RateResponse(
            rate_bps=[float(v) for v in rates],
            shannon_scale=params.prelog,
            dispersion_coeff=params.dispersion_coeff,
        )

    @app.post("/solve", response_model=SolveResponse)
    def solve(req: SolveRequest):
        cfg = _config_or_422(req.config)
        try:
            tup = SweepTuple.from_label(req.tuple)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        if req.scenario_index < 0:
            raise HTTPException(status_code=422, detail="scenario_index must be >= 0")
        report = solve_one(cfg, tup, req.scenario_index)
        return SolveResponse(
            tuple=tup.label,
            scheme=report.scheme,
            objective=report.objective,
            direction=report.direction,
            alpha=[float(v) for v in report.alpha],
            converged=bool(report.converged),
            iterations=int(report.iterations),
            objective_trace=[float(v) for v in report.objective_trace],
            per_user_rates=[float(v) for v in report.per_user_rates],
            diagnostics=report.diagnostics,
        )

    @app.post("/experiments", response_model=ExperimentStatus, status_code=202)
    def submit_experiment(req: ExperimentRequest):
        cfg = _config_or_422(req.config)
        job_id = jobs.submit(cfg)
        return ExperimentStatus(id=job_id, state="queued")

    @app.get("/experiments/{job_id}", response_model=ExperimentStatus)
    def experiment_status(job_id: str):
        try:
            st = jobs.status(job_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown experiment id")
        return ExperimentStatus(id=job_id, **st)

    @app.get("/experiments/{job_id}/files", response_model=ExperimentFiles)
    def experiment_files(job_id: str):
        try:
            st = jobs.status(job_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown experiment id")
        return ExperimentFiles(id=job_id, files=st["files"])

    @app.get("/experiments/{job_id}/files/{name}")
    def experiment_file(job_id: str, name: str):
        try:
            path = jobs.file_path(job_id, name)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown experiment id")
        except FileNotFoundError:
            raise HTTPException(status_code=404, detail=f"no such file {name!r}")
        return FileResponse(path, media_type="application/octet-stream", filename=name)

    return app
