import json
import time

import pytest
from fastapi.testclient import TestClient

from bftrange import report as report_mod
from bftrange.service import create_app


@pytest.fixture
def client(tmp_path):
    app = create_app(out_root=tmp_path, auto_confirm=True)
    with TestClient(app) as c:
        yield c


def base_scenario(**kw):
    scn = {"name": "svc", "seed": 3, "duration_ms": 2500,
           "twin": {"enabled": False},
           "workload": {"period_ms": 300, "start_ms": 100}}
    for k, v in kw.items():
        if isinstance(v, dict) and isinstance(scn.get(k), dict):
            scn[k].update(v)
        else:
            scn[k] = v
    return scn


def wait_finished(client, run_id, timeout=30.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        status = client.get(f"/api/runs/{run_id}").json()
        if status["state"] in ("finished", "stopped", "failed"):
            return status
        time.sleep(0.02)
    raise TimeoutError("run did not finish")


def test_validate_endpoint_reports_all_errors(client):
    res = client.post("/api/validate",
                      json={"consensus": {"f": 1, "n": 5, "timeout_ms": 0}})
    body = res.json()
    assert body["ok"] is False
    assert len(body["errors"]) >= 2
    ok = client.post("/api/validate", json=base_scenario()).json()
    assert ok["ok"] is True and ok["n"] == 4


def test_run_lifecycle_and_report(client):
    run_id = client.post("/api/runs",
                         json={"scenario": base_scenario()}).json()["run_id"]
    status = wait_finished(client, run_id)
    assert status["state"] == "finished"
    assert status["error"] is None
    report = client.get(f"/api/runs/{run_id}/report").json()
    assert report["metrics"]["requests_decided"] > 0
    listed = client.get("/api/runs").json()
    assert any(r["run_id"] == run_id for r in listed)


def test_records_arrive_in_offset_order(client):
    run_id = client.post("/api/runs",
                         json={"scenario": base_scenario()}).json()["run_id"]
    wait_finished(client, run_id)
    res = client.get(f"/api/runs/{run_id}/topics/ot.audit/records").json()
    offsets = [r["offset"] for r in res["records"]]
    assert offsets == list(range(len(offsets)))
    assert res["head"] == len(offsets) - 1


def test_stream_delivers_all_records_with_resume(client):
    run_id = client.post("/api/runs",
                         json={"scenario": base_scenario()}).json()["run_id"]
    wait_finished(client, run_id)
    head = client.get(
        f"/api/runs/{run_id}/topics/ot.telemetry/records").json()["head"]
    got = []
    with client.stream(
            "GET", f"/api/runs/{run_id}/topics/ot.telemetry/stream?start=3"
    ) as res:
        for line in res.iter_lines():
            if line.startswith("data: ") and line != "data: {}":
                got.append(json.loads(line[6:]))
            if line.startswith("event: end"):
                break
    assert [r["offset"] for r in got] == list(range(3, head + 1))


def test_live_injected_fault_lands_in_trace(client, tmp_path):
    scenario = base_scenario(duration_ms=4000)
    run_id = client.post("/api/runs", json={
        "scenario": scenario, "pace": 0.5}).json()["run_id"]
    res = client.post(f"/api/runs/{run_id}/faults", json={"spec": {
        "id": "live-delay", "kind": "delay",
        "match": {"kinds": ["PrePrepare"]},
        "window_ms": [0, 4000], "params": {"delay_ms": 2}}})
    assert res.status_code == 200, res.text
    assert res.json()["spec_id"] == "live-delay"
    wait_finished(client, run_id)
    report = client.get(f"/api/runs/{run_id}/report").json()
    assert any(t["spec"] == "live-delay"
               for t in report["injection_trace"])
    assert any(ev["kind"] == "inject_fault"
               for ev in report["external_events"])


def test_within_model_rule_enforced_on_live_injection(client):
    scenario = base_scenario(
        duration_ms=3000,
        faults=[{"id": "a", "kind": "crash", "bound": ["r0"],
                 "window_ms": [500, 900]}])
    run_id = client.post("/api/runs", json={
        "scenario": scenario, "pace": 0.5}).json()["run_id"]
    res = client.post(f"/api/runs/{run_id}/faults", json={"spec": {
        "id": "second-byz", "kind": "state_lie", "bound": ["r1"],
        "window_ms": [0, 3000]}})
    assert res.status_code == 422
    assert any("exceeds_fault_bound" in e for e in res.json()["detail"])
    client.post(f"/api/runs/{run_id}/stop")


def test_interactive_run_replays_identically(client, tmp_path):
    run_id = client.post("/api/runs", json={
        "scenario": base_scenario(duration_ms=3000),
        "pace": 0.3}).json()["run_id"]
    client.post(f"/api/runs/{run_id}/events", json={
        "event": {"kind": "setpoint", "value": 6.5}})
    wait_finished(client, run_id)
    report = client.get(f"/api/runs/{run_id}/report").json()
    assert report["external_events"]
    ok, want, got = report_mod.replay_run(tmp_path / "runs" / run_id)
    assert ok, (want, got)


def test_job_launch_publishes_results(client):
    scenario = base_scenario(duration_ms=4000, twin={"enabled": True})
    run_id = client.post("/api/runs", json={
        "scenario": scenario, "pace": 0.5}).json()["run_id"]
    res = client.post(f"/api/runs/{run_id}/jobs", json={"job": {
        "kind": "what_if", "horizon_ms": 600, "delta": {}, "faults": []}})
    assert res.status_code == 200
    wait_finished(client, run_id)
    results = client.get(f"/api/runs/{run_id}/results").json()["results"]
    assert any(r["body"]["type"] == "whatif_report" for r in results)
    outcome = [r["body"]["outcome"] for r in results
               if r["body"]["type"] == "whatif_report"]
    assert outcome == ["SafeLive"]


def test_advisory_confirmation_flow(client):
    scenario = base_scenario(
        duration_ms=6000,
        consensus={"timeout_ms": 3},
        twin={"enabled": True},
        jobs=[{"kind": "sweep", "at_ms": 1500, "horizon_ms": 800,
               "axes": [{"path": "consensus.timeout_ms",
                         "values": [1, 2, 3, 4, 5, 6, 7, 8]},
                        {"fault_param": "delay_us",
                         "values": [2000, 4000]}],
               "faults_template": [{"kind": "delay",
                                    "match": {"kinds": ["PrePrepare"]},
                                    "window_ms": [50, 780]}]}])
    run_id = client.post("/api/runs", json={
        "scenario": scenario, "auto_confirm": False,
        "pace": 0.0}).json()["run_id"]
    wait_finished(client, run_id)
    advs = client.get(f"/api/runs/{run_id}/advisories").json()
    assert advs["advisories"]
    # auto policy applied it (within bounds): decision recorded exactly once
    assert len(advs["decisions"]) == 1
    aid = advs["decisions"][0]["advisory_id"]
    res = client.post(f"/api/runs/{run_id}/advisories/{aid}/decision",
                      json={"approve": True})
    assert res.status_code == 409  # AlreadyDecided surfaced


def test_unknown_run_404(client):
    assert client.get("/api/runs/nope").status_code == 404
