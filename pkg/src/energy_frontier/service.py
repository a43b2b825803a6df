"""HTTP job service.

Clients register a job (DAG plus profiles) and get an id back at once; the
frontier is characterized on a background worker pool. Until it is ready,
schedule requests are answered with the all-max-frequency schedule. Straggler
notifications switch the deployed schedule after a delay; a newer
notification replaces a pending one (last writer wins).

Job state lives in one JSON file per job in the working directory
(``PERSEUS_WORKDIR``, default ``./jobs``), with the frontier CSV alongside.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel, Field

from .costmodel import DEFAULT_P_BLOCKING_W, ProfileSet
from .frontier import (
    DEFAULT_TAU_US,
    EnergySchedule,
    Frontier,
    OptimizationError,
    PlanningProblem,
    ProfileError,
    all_max_schedule,
    discover_frontier,
    lookup,
)
from .io import (
    InputError,
    builtin_profiles,
    dag_from_json,
    dump_json,
    frontier_bundle,
    frontier_csv,
    load_bundle,
    parse_dag_spec,
    profiles_from_json,
    schedule_to_json,
)

log = logging.getLogger(__name__)

WORKDIR_ENV = "PERSEUS_WORKDIR"
CHARACTERIZING, READY, FAILED = "characterizing", "ready", "failed"


class JobRequest(BaseModel):
    dag: Union[str, Dict[str, Any]]
    profiles: Optional[Dict[str, Any]] = None
    tau_us: float = Field(float(DEFAULT_TAU_US), gt=0)


class StragglerNotice(BaseModel):
    delay_s: float = Field(0.0, ge=0)
    degree: float = Field(..., ge=1)


@dataclass(eq=False)
class Job:
    job_id: str
    request: Dict[str, Any]
    problem: PlanningProblem
    profiles: ProfileSet
    fallback: Dict[str, Any]  # all-max schedule payload
    state: str = CHARACTERIZING
    error: Optional[str] = None
    frontier: Optional[Frontier] = None
    bundle: Optional[Dict[str, Any]] = None
    payloads: Dict[int, Dict[str, Any]] = field(default_factory=dict)
    degree: float = 1.0
    pending: Optional[threading.Timer] = None
    lock: threading.Lock = field(default_factory=threading.Lock)


class JobStore:
    def __init__(self, workdir: Union[str, Path, None] = None, workers: int = 2, quantum_us: float = 1.0,
                 p_blocking_w: Optional[float] = None):
        if workers < 1:
            raise ValueError("need at least one worker")
        self.workdir = Path(workdir or os.environ.get(WORKDIR_ENV) or "jobs")
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.quantum_us = quantum_us
        self.p_blocking_w = p_blocking_w
        self._jobs: Dict[str, Job] = {}
        self._jobs_lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="characterize")
        self._restore()

    # -- lifecycle ----------------------------------------------------------

    def _build(self, request: Dict[str, Any]) -> Tuple[PlanningProblem, ProfileSet]:
        spec = request["dag"]
        if isinstance(spec, str):
            dag, builtin = parse_dag_spec(spec)
        else:
            dag, builtin = dag_from_json(spec), False
        if request.get("profiles") is not None:
            profiles = profiles_from_json(request["profiles"], self.p_blocking_w)
        elif builtin:
            p_b = DEFAULT_P_BLOCKING_W if self.p_blocking_w is None else self.p_blocking_w
            profiles = builtin_profiles(dag.num_stages, p_b)
        else:
            raise InputError("profiles are required for a custom DAG")
        tau = request["tau_us"] / self.quantum_us
        if abs(tau - round(tau)) > 1e-9 or round(tau) < 1:
            raise InputError("tau_us must be a positive multiple of the quantum")
        try:
            return PlanningProblem.build(dag, profiles, int(round(tau)), self.quantum_us * 1e-6), profiles
        except ProfileError as e:
            raise InputError(str(e)) from e

    def submit(self, request: Dict[str, Any], job_id: Optional[str] = None) -> Job:
        problem, profiles = self._build(request)
        job = Job(job_id or uuid.uuid4().hex[:16], request, problem, profiles,
                  schedule_to_json(all_max_schedule(problem), self.quantum_us))
        with self._jobs_lock:
            self._jobs[job.job_id] = job
        self._persist(job)
        self._pool.submit(self._characterize, job)
        return job

    def _characterize(self, job: Job) -> None:
        try:
            frontier = discover_frontier(job.problem)
            bundle = frontier_bundle(frontier, job.profiles, self.quantum_us)
        except (OptimizationError, InputError, ValueError) as e:
            log.warning("job %s failed: %s", job.job_id, e)
            with job.lock:
                job.state, job.error = FAILED, str(e)
            self._persist(job)
            return
        self._publish(job, frontier, bundle)

    def _publish(self, job: Job, frontier: Frontier, bundle: Dict[str, Any]) -> None:
        payloads = {s.schedule_id: schedule_to_json(s, self.quantum_us) for s in frontier.schedules}
        frontier.lookup(frontier.t_min)  # build the lookup index before going live
        with job.lock:
            job.frontier, job.bundle, job.payloads, job.state = frontier, bundle, payloads, READY
        (self.workdir / f"{job.job_id}.frontier.csv").write_text(frontier_csv(frontier, self.quantum_us))
        self._persist(job)
        log.info("job %s ready: %d schedules", job.job_id, len(frontier.schedules))

    def _persist(self, job: Job) -> None:
        with job.lock:
            record = {
                "job_id": job.job_id,
                "state": job.state,
                "error": job.error,
                "request": job.request,
                "straggler_degree": job.degree,
                "frontier": job.bundle,
            }
        path = self.workdir / f"{job.job_id}.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(dump_json(record))
        os.replace(tmp, path)

    def _restore(self) -> None:
        for path in sorted(self.workdir.glob("*.json")):
            try:
                record = json.loads(path.read_text())
                problem, profiles = self._build(record["request"])
            except (OSError, ValueError, KeyError) as e:
                log.warning("skipping job file %s: %s", path, e)
                continue
            job = Job(record["job_id"], record["request"], problem, profiles,
                      schedule_to_json(all_max_schedule(problem), self.quantum_us),
                      degree=float(record.get("straggler_degree", 1.0)))
            self._jobs[job.job_id] = job
            if record.get("state") == READY and record.get("frontier"):
                self._publish(job, load_bundle(record["frontier"]), record["frontier"])
            elif record.get("state") == FAILED:
                job.state, job.error = FAILED, record.get("error")
            else:
                self._pool.submit(self._characterize, job)

    def shutdown(self) -> None:
        with self._jobs_lock:
            jobs = list(self._jobs.values())
        for job in jobs:
            with job.lock:
                if job.pending is not None:
                    job.pending.cancel()
        self._pool.shutdown(wait=False, cancel_futures=True)

    # -- queries ------------------------------------------------------------

    def get(self, job_id: str) -> Job:
        try:
            return self._jobs[job_id]
        except KeyError:
            raise KeyError(job_id) from None

    def status(self, job_id: str) -> Dict[str, Any]:
        job = self.get(job_id)
        out: Dict[str, Any] = {"job_id": job.job_id, "state": job.state, "straggler_degree": job.degree}
        if job.error:
            out["error"] = job.error
        fr = job.frontier
        if fr is not None:
            out.update(T_min_us=fr.t_min * self.quantum_us, T_star_us=fr.t_star * self.quantum_us, steps=fr.steps)
        return out

    def schedule(self, job_id: str, straggler_time_us: Optional[float] = None) -> Dict[str, Any]:
        """Schedule for the given straggler time, or the deployed one.

        A table read once the frontier is ready; frontier objects are
        immutable, so no lock is taken.
        """
        job = self.get(job_id)
        fr = job.frontier
        if fr is None:
            return {"state": job.state, "straggler_time_us": straggler_time_us, **job.fallback}
        if straggler_time_us is None:
            t_prime = job.degree * fr.t_min
        else:
            t_prime = straggler_time_us / self.quantum_us
        chosen: EnergySchedule = lookup(fr, t_prime)
        return {"state": READY, "straggler_time_us": t_prime * self.quantum_us, **job.payloads[chosen.schedule_id]}

    def notify_straggler(self, job_id: str, delay_s: float, degree: float) -> Dict[str, Any]:
        if degree < 1:
            raise ValueError("degree must be at least 1")
        job = self.get(job_id)

        def apply():
            with job.lock:
                if job.pending is not timer:
                    return  # superseded
                job.degree, job.pending = degree, None
            self._persist(job)

        timer = threading.Timer(delay_s, apply)
        timer.daemon = True
        with job.lock:
            if job.pending is not None:
                job.pending.cancel()
            job.pending = timer
        timer.start()
        return {"job_id": job_id, "degree": degree, "delay_s": delay_s}

    def frontier_csv(self, job_id: str) -> Optional[str]:
        job = self.get(job_id)
        return None if job.frontier is None else frontier_csv(job.frontier, self.quantum_us)


def create_app(workdir: Union[str, Path, None] = None, workers: int = 2, quantum_us: float = 1.0,
               p_blocking_w: Optional[float] = None, store: Optional[JobStore] = None) -> FastAPI:
    store = store or JobStore(workdir, workers, quantum_us, p_blocking_w)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        store.shutdown()

    app = FastAPI(title="energy-frontier", lifespan=lifespan)
    app.state.store = store

    def _job(job_id: str) -> Job:
        try:
            return store.get(job_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id}") from None

    @app.post("/jobs", status_code=202)
    def create_job(req: JobRequest) -> Dict[str, Any]:
        try:
            job = store.submit(req.model_dump() if hasattr(req, "model_dump") else req.dict())
        except InputError as e:
            raise HTTPException(status_code=422, detail=str(e)) from None
        return {"job_id": job.job_id, "state": job.state}

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str) -> Dict[str, Any]:
        _job(job_id)
        return store.status(job_id)

    @app.get("/jobs/{job_id}/schedule")
    def get_schedule(job_id: str, straggler_time_us: Optional[float] = Query(None, ge=0)) -> Dict[str, Any]:
        _job(job_id)
        return store.schedule(job_id, straggler_time_us)

    @app.get("/jobs/{job_id}/frontier", response_class=PlainTextResponse)
    def get_frontier(job_id: str) -> str:
        _job(job_id)
        text = store.frontier_csv(job_id)
        if text is None:
            raise HTTPException(status_code=409, detail="frontier not ready")
        return text

    @app.post("/jobs/{job_id}/straggler", status_code=202)
    def straggler(job_id: str, notice: StragglerNotice) -> Dict[str, Any]:
        _job(job_id)
        return store.notify_straggler(job_id, notice.delay_s, notice.degree)

    return app
