import pytest

from bftrange.runner import execute_standalone
from bftrange.sim import MS
from bftrange.twin import (BudgetExceeded, CursorMismatch, GapDetected,
                           InsufficientBaseline, InvalidDelta, SAFE_LIVE,
                           Twin, UnknownSnapshot, classify, state_hash)
from conftest import make_scenario, run_scenario


def mirrored_twin(rt):
    twin = Twin(rt.scenario)
    for topic in ("ot.telemetry", "ot.audit"):
        for rec in rt.broker.logs[topic].records:
            twin.ingest(rec)
    return twin


def std_executor(seed):
    return lambda data, faults, horizon, init, tag: execute_standalone(
        data, faults, horizon, init, tag, master_seed=seed)


class TestIngest:
    def test_full_prefix_reproduces_live_digests(self):
        rt, m = run_scenario(duration_ms=2500, twin={"enabled": True},
                             workload={"period_ms": 300, "start_ms": 100})
        twin = mirrored_twin(rt)
        assert twin.divergence(rt.live_digest()) == 0

    def test_offset_gap_detected(self):
        rt, _ = run_scenario(duration_ms=1500,
                             workload={"period_ms": 300, "start_ms": 100})
        twin = Twin(rt.scenario)
        records = rt.broker.logs["ot.telemetry"].records
        twin.ingest(records[0])
        with pytest.raises(GapDetected):
            twin.ingest(records[2])

    def test_nothing_ingested_is_clean_state(self):
        scn = make_scenario()
        twin = Twin(scn)
        assert twin.state.cursors == {}
        assert twin.state.confirmed == []


class TestSnapshots:
    def test_round_trip_same_content_hash(self):
        rt, _ = run_scenario(duration_ms=1500, twin={"enabled": True},
                             workload={"period_ms": 300, "start_ms": 100})
        twin = rt.twin_component.twin
        before = state_hash(twin.state)
        snap = twin.snapshot()
        twin.restore(snap.id)
        assert state_hash(twin.state) == before
        assert snap.id == before

    def test_restore_and_reingest_is_deterministic(self):
        rt, _ = run_scenario(duration_ms=2500, twin={"enabled": False},
                             workload={"period_ms": 300, "start_ms": 100})
        records = (rt.broker.logs["ot.telemetry"].records
                   + rt.broker.logs["ot.audit"].records)
        records.sort(key=lambda r: (r.stamp.real, r.stamp.logical))
        twin = Twin(rt.scenario)
        for rec in records[:20]:
            twin.ingest(rec)
        snap = twin.snapshot()
        hashes = []
        for _ in range(2):
            twin.restore(snap.id)
            for rec in records[20:]:
                twin.ingest(rec)
            hashes.append(state_hash(twin.state))
        assert hashes[0] == hashes[1]

    def test_unknown_snapshot(self):
        twin = Twin(make_scenario())
        with pytest.raises(UnknownSnapshot):
            twin.restore("nope")


class TestClassify:
    BASE = {"safety_violation": False, "request_latencies": [1000],
            "undecided_ages": [], "requests_submitted": 5,
            "false_suspicions": 0, "failsafe_engaged": False}

    def test_safe_live(self):
        assert classify(dict(self.BASE), 300 * MS, 10, 0.2) == "SafeLive"

    def test_safety_wins_over_everything(self):
        m = dict(self.BASE, safety_violation=True, failsafe_engaged=True,
                 false_suspicions=100)
        assert classify(m, 300 * MS, 10, 0.2) == "SafetyViolation"

    def test_liveness_violation_from_undecided_age(self):
        m = dict(self.BASE, undecided_ages=[4_000_000])
        assert classify(m, 100 * MS, 10, 0.2) == "LivenessViolation"

    def test_storm_threshold_is_rate_per_request(self):
        m = dict(self.BASE, false_suspicions=2, requests_submitted=5)
        assert classify(m, 300 * MS, 10, 0.2) == "FalseSuspicionStorm"
        m = dict(self.BASE, false_suspicions=1, requests_submitted=5)
        assert classify(m, 300 * MS, 10, 0.2) == "SafeLive"

    def test_failsafe_engaged(self):
        m = dict(self.BASE, failsafe_engaged=True)
        assert classify(m, 300 * MS, 10, 0.2) == "FailSafeEngaged"


class TestWhatIf:
    def test_null_experiment_is_safe_live(self):
        scn = make_scenario(duration_ms=1200,
                            workload={"period_ms": 300, "start_ms": 100})
        twin = Twin(scn, executor=std_executor(scn.seed))
        report = twin.what_if(twin.snapshot(), {}, [], 1200 * MS)
        assert report.outcome == SAFE_LIVE
        assert report.metrics["requests_decided"] > 0

    def test_timeout_below_round_trip_storms(self):
        scn = make_scenario(
            duration_ms=1200,
            lanes={"consensus": {"kind": "deterministic",
                                 "base_delay_us": 3000, "jitter_bound_us": 0}},
            workload={"period_ms": 300, "start_ms": 100})
        twin = Twin(scn, executor=std_executor(scn.seed))
        report = twin.what_if(twin.snapshot(),
                              {"consensus.timeout_ms": 1}, [], 1200 * MS)
        assert report.outcome == "FalseSuspicionStorm"

    def test_crashing_f_plus_one_kills_liveness(self):
        scn = make_scenario(duration_ms=1500, consensus={"timeout_ms": 20},
                            workload={"period_ms": 300, "start_ms": 100})
        twin = Twin(scn, executor=std_executor(scn.seed))
        report = twin.what_if(
            twin.snapshot(), {},
            [{"id": "c", "kind": "crash", "bound": ["r0", "r1"],
              "window_ms": [200, 1500]}],
            1500 * MS)
        assert report.outcome == "LivenessViolation"

    def test_invalid_delta_rejected(self):
        scn = make_scenario()
        twin = Twin(scn, executor=std_executor(scn.seed))
        with pytest.raises(InvalidDelta):
            twin.what_if(twin.snapshot(), {"plant.capacity": 99}, [], 1000)

    def test_snapshot_seeds_plant_state(self):
        rt, _ = run_scenario(duration_ms=2000, twin={"enabled": True},
                             workload={"period_ms": 300, "start_ms": 100,
                                       "setpoints": [[500, 7.0]]})
        twin = rt.twin_component.twin
        snap = twin.snapshot()
        init = twin._init_from_snapshot(snap)
        assert init["setpoint0"] == 7.0
        assert init["level0"] == pytest.approx(twin.state.shadow_level)


class TestSweep:
    def axes(self, timeouts, delays):
        return [{"path": "consensus.timeout_ms", "values": timeouts},
                {"fault_param": "delay_us", "values": delays}]

    TEMPLATE = [{"kind": "delay", "match": {"kinds": ["PrePrepare"]},
                 "window_ms": [50, 1100]}]

    def sweep(self, twin, timeouts, delays, budget=None):
        return twin.sweep(twin.snapshot(), self.axes(timeouts, delays),
                          self.TEMPLATE, 1200 * MS, budget=budget)

    def base(self, seed=9):
        return make_scenario(seed=seed, duration_ms=1200,
                             consensus={"timeout_ms": 3},
                             workload={"period_ms": 300, "start_ms": 100})

    def test_single_cell_grid(self):
        scn = self.base()
        twin = Twin(scn, executor=std_executor(scn.seed))
        vmap = twin.sweep(twin.snapshot(),
                          [{"path": "consensus.timeout_ms", "values": [5]}],
                          [], 1200 * MS)
        assert list(vmap.cells) == ["0"]
        assert vmap.cells["0"]["outcome"] == SAFE_LIVE

    def test_budget_enforced(self):
        scn = self.base()
        twin = Twin(scn, executor=std_executor(scn.seed))
        with pytest.raises(BudgetExceeded):
            self.sweep(twin, [1, 2, 3], [1000, 2000, 3000], budget=8)

    def test_frontier_matches_analytic_rule(self):
        """Deterministic lane: a cell violates iff injected delay >= timeout,
        within one grid cell of the analytic frontier."""
        timeouts = [1, 2, 3, 4, 5]
        delays = [1000, 2000, 3000, 4000, 5000]
        scn = self.base()
        twin = Twin(scn, executor=std_executor(scn.seed))
        vmap = self.sweep(twin, timeouts, delays)
        step = 1  # one grid cell, in ms
        for key, cell in vmap.cells.items():
            i, j = (int(c) for c in key.split(","))
            t_ms, d_ms = timeouts[i], delays[j] / 1000
            violating = cell["outcome"] != SAFE_LIVE
            oracle = d_ms >= t_ms
            if violating != oracle:
                assert abs(d_ms - t_ms) <= step, (key, cell["outcome"])

    def test_same_seed_same_map(self):
        scn = self.base()
        maps = []
        for _ in range(2):
            twin = Twin(scn, executor=std_executor(scn.seed))
            maps.append(self.sweep(twin, [2, 4], [1000, 3000]).outcome_grid())
        assert maps[0] == maps[1]

    def test_boundary_edges_separate_classes(self):
        scn = self.base()
        twin = Twin(scn, executor=std_executor(scn.seed))
        vmap = self.sweep(twin, [2, 4], [1000, 3000])
        for a, b in vmap.boundary:
            va = vmap.cells[a]["outcome"] == SAFE_LIVE
            vb = vmap.cells[b]["outcome"] == SAFE_LIVE
            assert va != vb

    def test_isolation_no_ot_publishes_from_sweeps(self):
        rt, _ = run_scenario(
            duration_ms=1500, twin={"enabled": True},
            workload={"period_ms": 300, "start_ms": 100},
            jobs=[{"kind": "sweep", "at_ms": 1000, "horizon_ms": 600,
                   "axes": [{"path": "consensus.timeout_ms",
                             "values": [2, 5]}],
                   "faults_template": []}])
        for topic in ("ot.telemetry", "ot.audit", "ot.actuation"):
            producers = {r.producer
                         for r in rt.broker.logs[topic].records}
            assert not any(p.startswith("twin") for p in producers)


class TestAnomalies:
    def storm_run(self, storm=True):
        faults = [{"id": f"calib{w}", "kind": "delay",
                   "match": {"kinds": ["PrePrepare"]},
                   "window_ms": [w, w + 60], "params": {"delay_ms": 12}}
                  for w in range(200, 6000, 900)]
        if storm:
            faults.append({"id": "storm", "kind": "delay",
                           "match": {"kinds": ["PrePrepare"]},
                           "window_ms": [6000, 8000],
                           "params": {"delay_ms": 12}})
        return run_scenario(
            seed=13, duration_ms=9000,
            consensus={"timeout_ms": 10},
            twin={"enabled": True, "calibration_ms": 6000,
                  "window_ms": 1000, "anomaly_k": 3.0},
            workload={"period_ms": 150, "start_ms": 100},
            faults=faults)

    def test_delay_storm_flagged_in_storm_window(self):
        rt, m = self.storm_run(storm=True)
        anomalies = rt.twin_component.twin.detect_anomalies(horizon_us=9000 * MS)
        vc_flags = [a for a in anomalies if a["type"] == "view_change_rate"]
        assert vc_flags, "storm not detected"
        assert any(a["window"][0] >= 6000 * MS and a["window"][1] <= 8000 * MS
                   for a in vc_flags)
        for a in vc_flags:
            assert a["evidence"], "anomaly must cite audit records"

    def test_fault_free_control_run_is_clean(self):
        rt, m = run_scenario(
            seed=13, duration_ms=9000,
            twin={"enabled": True, "calibration_ms": 6000,
                  "window_ms": 1000, "anomaly_k": 3.0},
            workload={"period_ms": 150, "start_ms": 100})
        assert rt.twin_component.twin.detect_anomalies(horizon_us=9000 * MS) == []

    def test_window_before_calibration_rejected(self):
        rt, m = self.storm_run(storm=False)
        with pytest.raises(InsufficientBaseline):
            rt.twin_component.twin.detect_anomalies(
                horizon_us=9000 * MS, window=(1000 * MS, 2000 * MS))


class TestDivergence:
    def test_truncated_ingest_counts_missing_entries(self):
        rt, _ = run_scenario(duration_ms=2500, twin={"enabled": False},
                             workload={"period_ms": 300, "start_ms": 100})
        live = rt.live_digest()
        twin = mirrored_twin(rt)
        assert twin.divergence(live) == 0
        # drop the last 2 confirmed decisions from the twin's view
        twin.state.confirmed = twin.state.confirmed[:-2]
        score = twin._mismatch_score(live) if hasattr(twin, "_mismatch_score") \
            else None
        live2 = dict(live)
        live2["cursors"] = dict(twin.state.cursors)
        assert twin.divergence(live2) == 2

    def test_cursor_mismatch_raises(self):
        rt, _ = run_scenario(duration_ms=1500,
                             workload={"period_ms": 300, "start_ms": 100})
        twin = Twin(rt.scenario)
        with pytest.raises(CursorMismatch):
            twin.divergence(rt.live_digest())

    def test_noisy_run_still_mirrors_exactly(self):
        rt, _ = run_scenario(duration_ms=2000, twin={"enabled": False},
                             plant={"sensor_noise": 0.005},
                             workload={"period_ms": 300, "start_ms": 100})
        twin = mirrored_twin(rt)
        assert twin.divergence(rt.live_digest()) == 0
