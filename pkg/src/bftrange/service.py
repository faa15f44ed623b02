"""HTTP + streaming service: the console backend.

Runs execute on background threads stepping the owning scheduler in fixed
quanta; every mutation from outside (fault injection, advisory confirmation,
job launches) enters as an external event on a poll boundary and is logged,
so an interactive session replays bit-identically afterwards.  Live records
stream out over server-sent events with cursor-based resume.
"""

from __future__ import annotations

import json
import threading
import time
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import StreamingResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import report as report_mod
from .broker import TOPICS
from .faults import check_fault_bound
from .runner import Runtime
from .scenario import Scenario, ScenarioError, _fault_spec_from_json, validate
from .sim import MS

STEP_US = 20 * MS


class RunHandle:
    def __init__(self, run_id: str, runtime: Runtime, out_dir: Path | None,
                 pace: float = 0.0):
        self.id = run_id
        self.runtime = runtime
        self.out_dir = out_dir
        self.pace = pace
        self.state = "running"
        self.lock = threading.Lock()
        self.report: dict | None = None
        self.stop_requested = False
        self.error: str | None = None
        self.thread = threading.Thread(target=self._loop, daemon=True)

    def start(self) -> None:
        with self.lock:
            self.duration = self.runtime.start()
        self.thread.start()

    def _loop(self) -> None:
        try:
            while not self.stop_requested:
                with self.lock:
                    now = self.runtime.sched.now
                    if now >= self.duration:
                        break
                    self.runtime.step_to(min(now + STEP_US, self.duration))
                if self.pace > 0:
                    time.sleep(self.pace * STEP_US / 1_000_000)
            with self.lock:
                self.runtime.finish()
                self.report = self.runtime.build_report()
                if self.out_dir is not None:
                    report_mod.save_run(self.report, self.out_dir)
                    report_mod.record_verified_configs(
                        self.report, self.out_dir.parent.parent)
                self.state = "stopped" if self.stop_requested else "finished"
        except Exception as exc:  # surfaced via status
            self.error = repr(exc)
            self.state = "failed"

    def status(self) -> dict:
        with self.lock:
            counts = dict(self.runtime.recorder.counts)
            return {
                "run_id": self.id,
                "state": self.state,
                "scenario_name": self.runtime.scenario.name,
                "seed": self.runtime.seed,
                "now_ms": self.runtime.sched.now // MS,
                "duration_ms": self.runtime.scenario.duration // MS,
                "audit_counts": counts,
                "error": self.error,
            }


class RunRequest(BaseModel):
    scenario: dict
    seed: int | None = None
    pace: float = 0.0
    auto_confirm: bool | None = None


class FaultRequest(BaseModel):
    spec: dict
    exceeds_fault_bound: bool = False


class EventRequest(BaseModel):
    event: dict


class JobRequest(BaseModel):
    job: dict
    at_ms: int | None = None


class DecisionRequest(BaseModel):
    approve: bool = True
    rationale: str = ""


def create_app(out_root: str | Path = "out", auto_confirm: bool = False,
               frontend_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="bftrange", version="0.1.0")
    out_root = Path(out_root)
    registry: dict[str, RunHandle] = {}
    counter = {"n": 0}

    def handle(run_id: str) -> RunHandle:
        h = registry.get(run_id)
        if h is None:
            raise HTTPException(404, f"unknown run {run_id}")
        return h

    @app.post("/api/validate")
    def validate_endpoint(body: dict):
        try:
            scn = validate(body)
            return {"ok": True, "errors": [], "name": scn.name,
                    "f": scn.f, "n": scn.n, "hash": scn.hash()}
        except ScenarioError as exc:
            return {"ok": False, "errors": exc.errors}

    @app.post("/api/runs")
    def start_run(req: RunRequest):
        try:
            scn = validate(req.scenario)
        except ScenarioError as exc:
            raise HTTPException(422, detail=exc.errors)
        counter["n"] += 1
        run_id = f"run-{counter['n']:04d}"
        run_dir = out_root / "runs" / run_id
        ac = auto_confirm if req.auto_confirm is None else req.auto_confirm
        rt = Runtime(scn, seed=req.seed, store_root=run_dir / "store",
                     auto_confirm=ac, run_id=run_id)
        h = RunHandle(run_id, rt, run_dir, pace=req.pace)
        registry[run_id] = h
        h.start()
        return {"run_id": run_id}

    @app.get("/api/runs")
    def list_runs():
        return [registry[k].status() for k in sorted(registry)]

    @app.get("/api/runs/{run_id}")
    def run_status(run_id: str):
        return handle(run_id).status()

    @app.post("/api/runs/{run_id}/stop")
    def stop_run(run_id: str):
        h = handle(run_id)
        h.stop_requested = True
        return {"run_id": run_id, "stopping": True}

    @app.get("/api/runs/{run_id}/report")
    def get_report(run_id: str):
        h = handle(run_id)
        with h.lock:
            if h.report is None:
                raise HTTPException(409, "run not finished")
            return h.report

    @app.get("/api/runs/{run_id}/topics/{topic}/records")
    def get_records(run_id: str, topic: str, start: int = 0,
                    end: int | None = None):
        h = handle(run_id)
        if topic not in TOPICS:
            raise HTTPException(404, f"unknown topic {topic}")
        with h.lock:
            log = h.runtime.broker.logs[topic]
            head = log.head
            hi = head if end is None else min(end, head)
            records = [r.to_json() for r in log.records[start:hi + 1]]
        return {"topic": topic, "head": head, "records": records}

    @app.get("/api/runs/{run_id}/topics/{topic}/stream")
    def stream_topic(run_id: str, topic: str, start: int = 0):
        h = handle(run_id)
        if topic not in TOPICS:
            raise HTTPException(404, f"unknown topic {topic}")

        def gen():
            cursor = start
            while True:
                with h.lock:
                    log = h.runtime.broker.logs.get(topic)
                    batch = [r.to_json() for r in
                             (log.records[cursor:cursor + 200] if log else [])]
                    state = h.state
                for doc in batch:
                    yield (f"id: {doc['offset']}\n"
                           f"data: {json.dumps(doc, sort_keys=True)}\n\n")
                cursor += len(batch)
                if not batch:
                    if state in ("finished", "stopped", "failed"):
                        yield "event: end\ndata: {}\n\n"
                        return
                    time.sleep(0.03)

        return StreamingResponse(gen(), media_type="text/event-stream")

    @app.post("/api/runs/{run_id}/faults")
    def inject_fault(run_id: str, req: FaultRequest):
        h = handle(run_id)
        errs: list[str] = []
        spec_dict = dict(req.spec)
        spec_dict.setdefault("id", f"live{len(h.runtime.injector.specs)}")
        parsed = _fault_spec_from_json(spec_dict, 0, errs)
        if parsed is None:
            raise HTTPException(422, detail=errs)
        scn = h.runtime.scenario
        if scn.data["within_model"] and not req.exceeds_fault_bound \
                and not scn.data["exceeds_fault_bound"]:
            errs = check_fault_bound(h.runtime.injector.specs + [parsed],
                                     scn.f, False)
            if errs:
                raise HTTPException(422, detail=errs)
        with h.lock:
            if h.state != "running":
                raise HTTPException(409, f"run is {h.state}")
            at_ms = h.runtime.add_external_event({
                "kind": "inject_fault",
                "at_ms": h.runtime.sched.now // MS,
                "spec": spec_dict,
            })
        return {"spec_id": spec_dict["id"], "at_ms": at_ms}

    @app.post("/api/runs/{run_id}/events")
    def external_event(run_id: str, req: EventRequest):
        h = handle(run_id)
        ev = dict(req.event)
        ev.setdefault("at_ms", h.runtime.sched.now // MS)
        with h.lock:
            if h.state != "running":
                raise HTTPException(409, f"run is {h.state}")
            try:
                at_ms = h.runtime.add_external_event(ev)
            except ValueError as exc:
                raise HTTPException(422, detail=str(exc))
        return {"at_ms": at_ms}

    @app.post("/api/runs/{run_id}/jobs")
    def launch_job(run_id: str, req: JobRequest):
        h = handle(run_id)
        job = dict(req.job)
        if job.get("kind") not in ("what_if", "sweep"):
            raise HTTPException(422, "job.kind must be what_if|sweep")
        with h.lock:
            if h.state != "running":
                raise HTTPException(409, f"run is {h.state}")
            at_ms = h.runtime.add_external_event({
                "kind": "job",
                "at_ms": req.at_ms if req.at_ms is not None
                else h.runtime.sched.now // MS,
                "job": job,
            })
        return {"at_ms": at_ms}

    @app.get("/api/runs/{run_id}/results")
    def twin_results(run_id: str):
        h = handle(run_id)
        with h.lock:
            return {"results": [r.to_json() for r in
                                h.runtime.broker.logs["twin.results"].records]}

    @app.get("/api/runs/{run_id}/advisories")
    def advisories(run_id: str):
        h = handle(run_id)
        with h.lock:
            advs = [r.to_json() for r in
                    h.runtime.broker.logs["twin.advisory"].records]
            decisions = [d.to_json() for _, d in
                         sorted(h.runtime.manager.decisions.items())]
            pending = sorted(h.runtime.manager.pending_advisories)
        return {"advisories": advs, "decisions": decisions, "pending": pending}

    @app.post("/api/runs/{run_id}/advisories/{advisory_id}/decision")
    def decide_advisory(run_id: str, advisory_id: str, req: DecisionRequest):
        h = handle(run_id)
        with h.lock:
            mgr = h.runtime.manager
            known = advisory_id in mgr.decisions
            if known and advisory_id not in mgr.pending_advisories:
                raise HTTPException(409, "AlreadyDecided")
            if not known:
                raise HTTPException(404, f"unknown advisory {advisory_id}")
            if h.state != "running":
                raise HTTPException(409, f"run is {h.state}")
            at_ms = h.runtime.add_external_event({
                "kind": "confirm_advisory",
                "at_ms": h.runtime.sched.now // MS,
                "advisory_id": advisory_id,
                "approve": req.approve,
            })
        return {"advisory_id": advisory_id, "at_ms": at_ms,
                "approve": req.approve}

    if frontend_dir is not None and Path(frontend_dir).exists():
        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True),
                  name="console")

    return app
