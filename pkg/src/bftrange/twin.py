"""The operational twin: mirror, snapshot, what-if, sweep, anomaly detection.

The twin reconstructs shadow state from the recorded streams at digest level
(decisions confirmed by f+1 matching replica records, plant state from
telemetry) so mirror fidelity is checkable, while what-if instances fully
re-execute an isolated simulation seeded from a snapshot.  Execution of
those instances is injected as a callable, keeping this module free of any
operational-plane write path: results flow out only as published records on
twin-side topics.
"""

from __future__ import annotations

import copy
import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable

from .broker import Record
from .scenario import Scenario, apply_delta, is_tunable
from .sim import MS

# What-if outcome classes, worst first; classification picks the first rule
# that fires, never a heuristic.
SAFETY_VIOLATION = "SafetyViolation"
LIVENESS_VIOLATION = "LivenessViolation"
FALSE_SUSPICION_STORM = "FalseSuspicionStorm"
FAILSAFE_ENGAGED = "FailSafeEngaged"
SAFE_LIVE = "SafeLive"

OUTCOMES = (SAFETY_VIOLATION, LIVENESS_VIOLATION, FALSE_SUSPICION_STORM,
            FAILSAFE_ENGAGED, SAFE_LIVE)

VIOLATING = frozenset(OUTCOMES) - {SAFE_LIVE}


class TwinError(Exception):
    pass


class GapDetected(TwinError):
    def __init__(self, topic: str, expected: int, got: int):
        super().__init__(f"{topic}: expected offset {expected}, got {got}")
        self.topic, self.expected, self.got = topic, expected, got


class UnknownSnapshot(TwinError):
    pass


class CursorMismatch(TwinError):
    pass


class InsufficientBaseline(TwinError):
    pass


class InvalidDelta(TwinError):
    pass


class BudgetExceeded(TwinError):
    pass


def classify(metrics: dict, timeout_us: int, liveness_factor: float,
             storm_rate: float) -> str:
    """Map run metrics to an outcome class by the declared rules."""
    if metrics.get("safety_violation"):
        return SAFETY_VIOLATION
    # liveness is violated only by requests still pending past the bound;
    # a late decision is storm material, not a liveness loss
    bound = liveness_factor * timeout_us
    if metrics.get("undecided_ages") and max(metrics["undecided_ages"]) > bound:
        return LIVENESS_VIOLATION
    requests = max(metrics.get("requests_submitted", 0), 1)
    if metrics.get("false_suspicions", 0) / requests > storm_rate:
        return FALSE_SUSPICION_STORM
    if metrics.get("failsafe_engaged"):
        return FAILSAFE_ENGAGED
    return SAFE_LIVE


@dataclass
class TwinState:
    """Pure function of (genesis config, ingested record prefix)."""

    scenario: dict
    cursors: dict[str, int] = field(default_factory=dict)
    shadow_level: float | None = None
    shadow_setpoint: float | None = None
    mode_history: list = field(default_factory=list)
    replica_decisions: dict[str, list] = field(default_factory=dict)
    confirmed: list = field(default_factory=list)   # [seq, digest, command]
    _confirm_votes: dict = field(default_factory=dict)
    state_reports: dict = field(default_factory=dict)  # checkpoint -> {replica: digest}
    view_changes: list = field(default_factory=list)   # [real, twin_str, replica, offset]
    false_suspicions: list = field(default_factory=list)
    deadline_violations: list = field(default_factory=list)
    request_submits: dict = field(default_factory=dict)
    request_latencies: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = copy.deepcopy(self.__dict__)
        d["_confirm_votes"] = {f"{k[0]}|{k[1]}": sorted(v)
                               for k, v in self._confirm_votes.items()}
        d["request_submits"] = {json.dumps(list(k)): v
                                for k, v in self.request_submits.items()}
        d["request_latencies"] = {json.dumps(list(k)): v
                                  for k, v in self.request_latencies.items()}
        return d

    @staticmethod
    def from_json(d: dict) -> "TwinState":
        d = copy.deepcopy(d)

        def vote_key(k: str) -> tuple:
            seq_s, digest = k.split("|", 1)
            return (int(seq_s), digest)

        d["_confirm_votes"] = {vote_key(k): set(v)
                               for k, v in d.get("_confirm_votes", {}).items()}
        d["request_submits"] = {tuple(json.loads(k)): v
                                for k, v in d.get("request_submits", {}).items()}
        d["request_latencies"] = {tuple(json.loads(k)): v
                                  for k, v in d.get("request_latencies", {}).items()}
        st = TwinState(scenario=d.pop("scenario"))
        for k, v in d.items():
            setattr(st, k, v)
        return st


def state_hash(state: TwinState) -> str:
    blob = json.dumps(state.to_json(), sort_keys=True, separators=(",", ":"),
                      default=str).encode()
    return hashlib.blake2b(blob, digest_size=12).hexdigest()


@dataclass
class Snapshot:
    id: str
    at: dict                      # canonical timestamp json of snapshot point
    parent_run: str
    state_json: dict


@dataclass
class WhatIfReport:
    id: str
    base_snapshot: str
    delta: dict
    faults: list
    horizon_us: int
    outcome: str
    metrics: dict
    evidence: list

    def to_json(self) -> dict:
        return self.__dict__.copy()


@dataclass
class VulnerabilityMap:
    id: str
    axes: list            # [{"name": ..., "values": [...]}]
    cells: dict           # "i,j" -> {"outcome": ..., "metrics": {...}}
    boundary: list        # [[coords_a, coords_b], ...]

    def to_json(self) -> dict:
        return self.__dict__.copy()

    def outcome_grid(self) -> dict:
        return {k: v["outcome"] for k, v in self.cells.items()}


class Twin:
    """Shadow state plus the experiment engine.

    `executor(scenario_data, faults, horizon_us, init, stream_tag)` runs one
    isolated simulation and returns its metrics dict; the twin itself never
    touches the live scheduler or any operational topic.
    """

    def __init__(self, scenario: Scenario, executor: Callable | None = None,
                 run_id: str = "live"):
        self.scenario = scenario
        self.executor = executor
        self.run_id = run_id
        # the PLC starts in Normal mode at tick 0: genesis config, not stream data
        self.state = TwinState(scenario=scenario.data,
                               mode_history=[[0, "Normal"]])
        self.snapshots: dict[str, Snapshot] = {}
        self._report_seq = 0
        self._map_seq = 0

    # -- mirroring -------------------------------------------------------------

    def ingest(self, record: Record) -> None:
        topic = record.topic
        expected = self.state.cursors.get(topic, 0)
        if record.offset != expected:
            raise GapDetected(topic, expected, record.offset)
        self.state.cursors[topic] = expected + 1
        if topic == "ot.telemetry":
            self._ingest_telemetry(record)
        elif topic == "ot.audit":
            self._ingest_audit(record)

    def _ingest_telemetry(self, record: Record) -> None:
        body = record.body
        st = self.state
        st.shadow_level = body["level"]
        st.shadow_setpoint = body.get("setpoint", st.shadow_setpoint)
        mode = body["mode"]
        if not st.mode_history or st.mode_history[-1][1] != mode:
            st.mode_history.append([record.stamp.real, mode])

    def _ingest_audit(self, record: Record) -> None:
        body = record.body
        st = self.state
        kind = body.get("type")
        replica = body.get("replica", record.producer)
        if kind == "decision":
            st.replica_decisions.setdefault(replica, []).append(
                [body["seq"], body["digest"]])
            key = (body["seq"], body["digest"])
            votes = st._confirm_votes.setdefault(key, set())
            votes.add(replica)
            needed = self.scenario.f + 1
            if len(votes) == needed:
                st.confirmed.append([body["seq"], body["digest"], body["command"]])
                st.confirmed.sort(key=lambda e: e[0])
                rid = tuple(body.get("request_id", ()))
                if rid in st.request_submits and rid not in st.request_latencies:
                    st.request_latencies[rid] = \
                        record.stamp.real - st.request_submits[rid]
                cmd = body["command"]
                if cmd.get("kind") == "setpoint":
                    st.shadow_setpoint = cmd.get("value", st.shadow_setpoint)
        elif kind == "view_change_started":
            st.view_changes.append([record.stamp.real, str(record.stamp.twin),
                                    replica, record.offset])
        elif kind == "false_suspicion":
            st.false_suspicions.append([record.stamp.real, replica, record.offset])
        elif kind == "deadline_violation":
            st.deadline_violations.append([record.stamp.real, replica])
        elif kind == "request":
            rid = tuple(body.get("request_id", ()))
            st.request_submits.setdefault(rid, record.stamp.real)
        elif kind == "state_report":
            cp = body.get("checkpoint_seq", 0)
            self.state.state_reports.setdefault(str(cp), {})[replica] = \
                body.get("digest", "")

    # -- snapshots -------------------------------------------------------------

    def snapshot(self, at: dict | None = None) -> Snapshot:
        sid = state_hash(self.state)
        snap = Snapshot(sid, at or {}, self.run_id,
                        copy.deepcopy(self.state.to_json()))
        self.snapshots[sid] = snap
        return snap

    def restore(self, snapshot_id: str) -> TwinState:
        if snapshot_id not in self.snapshots:
            raise UnknownSnapshot(snapshot_id)
        self.state = TwinState.from_json(self.snapshots[snapshot_id].state_json)
        return self.state

    # -- divergence ---------------------------------------------------------------

    def live_view(self) -> dict:
        return {
            "decisions": [[s, d] for s, d, _ in self.state.confirmed],
            "modes": [list(m) for m in self.state.mode_history],
            "cursors": dict(self.state.cursors),
        }

    def divergence(self, live_digest: dict) -> int:
        for topic, head in live_digest.get("cursors", {}).items():
            if self.state.cursors.get(topic, 0) != head:
                raise CursorMismatch(
                    f"{topic}: twin at {self.state.cursors.get(topic, 0)}, live at {head}")
        mine = self.live_view()
        score = 0
        for key in ("decisions", "modes"):
            a, b = mine.get(key, []), live_digest.get(key, [])
            n = min(len(a), len(b))
            i = 0
            while i < n and a[i] == b[i]:
                i += 1
            if not (i == n and len(a) == len(b)):
                score += max(len(a), len(b)) - i
        return score

    def state_liars(self) -> list[str]:
        """Replicas whose checkpoint digests sit outside the f+1 majority."""
        liars: set[str] = set()
        for cp, reports in self.state.state_reports.items():
            counts: dict[str, int] = {}
            for digest in reports.values():
                counts[digest] = counts.get(digest, 0) + 1
            if not counts:
                continue
            majority = max(sorted(counts), key=lambda d: counts[d])
            if counts[majority] >= self.scenario.f + 1:
                liars |= {r for r, d in reports.items() if d != majority}
        return sorted(liars)

    # -- anomaly detection ----------------------------------------------------------

    def _window_series(self, values: list[float], horizon: float,
                       window: float) -> list[list[float]]:
        n = max(int(math.ceil(horizon / window)), 1)
        buckets: list[list[float]] = [[] for _ in range(n)]
        for v in values:
            idx = min(int(v // window), n - 1)
            buckets[idx].append(v)
        return buckets

    def detect_anomalies(self, horizon_us: int | None = None,
                         window: tuple[int, int] | None = None) -> list[dict]:
        cfg = self.scenario.data["twin"]
        window_us = cfg["window_ms"] * MS
        cal_us = cfg["calibration_ms"] * MS
        k = cfg["anomaly_k"]
        if horizon_us is None:
            horizon_us = self.scenario.duration
        if window is not None and window[0] < cal_us:
            raise InsufficientBaseline(
                f"window starts at {window[0]} before calibration end {cal_us}")
        cal_windows = int(cal_us // window_us)
        total_windows = int(math.ceil(horizon_us / window_us))
        if cal_windows < 1 or cal_windows >= total_windows:
            raise InsufficientBaseline("calibration prefix misconfigured")

        vc_times = [t for t, _, _, _ in self.state.view_changes]
        counts = [0] * total_windows
        evidence: list[list[int]] = [[] for _ in range(total_windows)]
        for t, _, _, offset in self.state.view_changes:
            idx = min(int(t // window_us), total_windows - 1)
            counts[idx] += 1
            evidence[idx].append(offset)

        base = counts[:cal_windows]
        mean = sum(base) / len(base)
        var = sum((c - mean) ** 2 for c in base) / len(base)
        sigma = math.sqrt(var)
        threshold = mean + k * sigma + 1e-9

        lat_by_window: list[list[int]] = [[] for _ in range(total_windows)]
        for rid, lat in self.state.request_latencies.items():
            submit = self.state.request_submits.get(rid, 0)
            idx = min(int(submit // window_us), total_windows - 1)
            lat_by_window[idx].append(lat)
        lat_base = [l for w in lat_by_window[:cal_windows] for l in w]
        lat_mean = sum(lat_base) / len(lat_base) if lat_base else 0.0
        lat_var = (sum((l - lat_mean) ** 2 for l in lat_base) / len(lat_base)
                   if lat_base else 0.0)
        lat_threshold = lat_mean + k * math.sqrt(lat_var) + 1e-9

        lo = window[0] if window else cal_us
        hi = window[1] if window else horizon_us
        anomalies = []
        for idx in range(cal_windows, total_windows):
            w_lo, w_hi = idx * window_us, (idx + 1) * window_us
            if w_hi <= lo or w_lo >= hi:
                continue
            if counts[idx] > threshold:
                anomalies.append({
                    "type": "view_change_rate", "window": [w_lo, w_hi],
                    "value": counts[idx], "threshold": threshold,
                    "evidence": sorted(evidence[idx]),
                })
            if lat_by_window[idx] and lat_base:
                wmean = sum(lat_by_window[idx]) / len(lat_by_window[idx])
                if wmean > lat_threshold:
                    anomalies.append({
                        "type": "quorum_latency", "window": [w_lo, w_hi],
                        "value": wmean, "threshold": lat_threshold,
                        "evidence": [],
                    })
        return anomalies

    # -- what-if / sweep ---------------------------------------------------------------

    def _check_delta(self, delta: dict) -> None:
        for path in delta:
            if not is_tunable(path):
                raise InvalidDelta(path)

    def _init_from_snapshot(self, snap: Snapshot) -> dict:
        st = snap.state_json
        init = {}
        if st.get("shadow_level") is not None:
            init["level0"] = st["shadow_level"]
        if st.get("shadow_setpoint") is not None:
            init["setpoint0"] = st["shadow_setpoint"]
        return init

    def what_if(self, snap: Snapshot | str, delta: dict, faults: list[dict],
                horizon_us: int, stream_tag: str | None = None) -> WhatIfReport:
        if isinstance(snap, str):
            if snap not in self.snapshots:
                raise UnknownSnapshot(snap)
            snap = self.snapshots[snap]
        self._check_delta(delta)
        if self.executor is None:
            raise TwinError("no executor wired")
        base = Scenario(data=copy.deepcopy(snap.state_json["scenario"]))
        data = base.data
        for path, value in delta.items():
            data = apply_delta(data, path, value)
        tag = stream_tag or f"whatif/{snap.id}/{self._report_seq}"
        metrics = self.executor(data, faults, horizon_us,
                                self._init_from_snapshot(snap), tag)
        cfg = self.scenario.data["twin"]
        timeout_us = data["consensus"]["timeout_ms"] * MS
        outcome = classify(metrics, timeout_us, cfg["liveness_bound_factor"],
                           cfg["storm_rate"])
        self._report_seq += 1
        return WhatIfReport(
            id=f"wr{self._report_seq:04d}",
            base_snapshot=snap.id,
            delta=dict(delta),
            faults=[dict(fd) for fd in faults],
            horizon_us=horizon_us,
            outcome=outcome,
            metrics=metrics,
            evidence=[metrics.get("event_log_hash", "")],
        )

    def sweep(self, snap: Snapshot | str, axes: list[dict],
              faults_template: list[dict], horizon_us: int,
              budget: int | None = None) -> VulnerabilityMap:
        if isinstance(snap, str):
            if snap not in self.snapshots:
                raise UnknownSnapshot(snap)
            snap = self.snapshots[snap]
        budget = budget or self.scenario.data["twin"]["sweep_budget"]
        sizes = [len(ax["values"]) for ax in axes]
        total = 1
        for s in sizes:
            total *= s
        if total > budget:
            raise BudgetExceeded(f"grid {total} > budget {budget}")

        cells: dict[str, dict] = {}
        for coords in itertools.product(*(range(s) for s in sizes)):
            delta: dict = {}
            faults = [copy.deepcopy(fd) for fd in faults_template]
            for ax, idx in zip(axes, coords):
                value = ax["values"][idx]
                if ax.get("path"):
                    delta[ax["path"]] = value
                if ax.get("fault_param"):
                    for fd in faults:
                        fd.setdefault("params", {})[ax["fault_param"]] = value
            key = ",".join(str(c) for c in coords)
            report = self.what_if(snap, delta, faults, horizon_us,
                                  stream_tag=f"cell/{key}")
            cells[key] = {"outcome": report.outcome, "metrics": report.metrics,
                          "delta": delta}

        boundary = []
        for coords in itertools.product(*(range(s) for s in sizes)):
            key = ",".join(str(c) for c in coords)
            mine = cells[key]["outcome"] in VIOLATING
            for dim in range(len(sizes)):
                nb = list(coords)
                nb[dim] += 1
                if nb[dim] >= sizes[dim]:
                    continue
                nkey = ",".join(str(c) for c in nb)
                if (cells[nkey]["outcome"] in VIOLATING) != mine:
                    boundary.append([key, nkey])
        self._map_seq += 1
        return VulnerabilityMap(
            id=f"vm{self._map_seq:04d}",
            axes=[{"name": ax.get("path") or ax.get("fault_param"),
                   "values": list(ax["values"])} for ax in axes],
            cells=cells,
            boundary=boundary,
        )
