"""Run orchestration: build the range from a scenario, drive it, report.

One Runtime owns one scheduler and every component on it: lanes, replicas,
plant+PLC, time gateway, broker feed, recorder (the audit plane holding
ground truth), manager, and the live twin.  What-if and sweep jobs spawn
fresh nested Runtimes with derived seeds, so parallel cells can never
perturb each other's streams.  External (console) events are logged to a
dedicated topic, which is what makes interactive sessions replayable:
(scenario, seed, external-event log) fully determines the run-report hash.
"""

from __future__ import annotations

import copy
import hashlib
import json
from fractions import Fraction
from pathlib import Path
from typing import Any

from . import consensus as cs
from .advisory import (APPLY, DEFER, REJECT, Advisory, AlreadyDecided,
                       ManagerDecision, Policy, ReplicaReplacement,
                       advisory_from_map, advisory_from_report,
                       check_membership_delta)
from .broker import AccessPolicy, Broker, Record, TOPICS, check_schema
from .faults import (BYZANTINE_KINDS, FaultInjector, FaultKind, FaultSpec)
from .gateway import ReorderBuffer, TimeGateway, TimeMapping
from .network import KeyRing, Lane, LaneKind, Network
from .plant import FAILSAFE, PlantComponent, PlantState, PlcState
from .scenario import Scenario, validate
from .sim import MS, Scheduler, derive_seed
from .twin import Twin

DRAIN_US = 60 * MS
EXT_QUANTUM = 10 * MS  # external inputs land on these boundaries


def _build_lanes(scn: Scenario) -> list[Lane]:
    members = {
        "consensus": scn.membership + scn.spares + ["manager"],
        "broker": scn.membership + scn.spares
                  + ["manager", "plc", "recorder", "twin", "broker"],
    }
    lanes = []
    for name, cfg in scn.data["lanes"].items():
        kind = LaneKind(cfg["kind"])
        lanes.append(Lane(
            name=name,
            kind=kind,
            members=members.get(name, ["twin", "broker"]),
            base_delay=int(cfg.get("base_delay_us", 200)),
            jitter_bound=int(cfg.get("jitter_bound_us", 0)),
            gst=int(cfg.get("gst_ms", 0) * MS),
            post_gst_bound=int(cfg.get("post_gst_bound_ms", 5) * MS),
            pre_gst_cap=int(cfg.get("pre_gst_cap_ms", 200) * MS),
            sigma=float(cfg.get("sigma", 0.8)),
        ))
    return lanes


class Facade:
    """The capability handle every component gets: all side effects of a
    component flow through here and therefore through the one scheduler."""

    def __init__(self, runtime: "Runtime"):
        self._r = runtime
        self.keyring = runtime.keyring

    def now(self) -> int:
        return self._r.sched.now

    def send(self, src: str, dst: str, body: Any) -> int:
        return self._r.net.send(src, dst, body)

    def broadcast(self, src: str, dsts: list[str], body: Any) -> list[int]:
        return self._r.net.broadcast(src, dsts, body)

    def audit(self, src: str, body: dict) -> None:
        self._r.recorder.emit(src, body)

    def publish(self, src: str, topic: str, body: dict) -> None:
        self._r.publish(src, topic, body)

    def schedule(self, target: str, due: int, payload: Any) -> int:
        return self._r.sched.schedule(due, target, payload, emitter=target)

    def rng(self, stream: str):
        return self._r.sched.rng.register(stream)

    def tag(self, src: str, body: Any) -> str:
        return self._r.keyring.tag(src, body)

    def verify(self, src: str, body: Any, tag: str) -> bool:
        return self._r.keyring.verify(src, body, tag)

    def falsify(self, src: str, report: dict) -> dict:
        return self._r.injector.maybe_falsify(src, report, self._r.sched.now)


class Recorder:
    """Audit plane: stamps and publishes audit records, mirrors them to the
    SIEM stream, and labels false suspicions using ground truth (fault
    bindings are visible here and nowhere else)."""

    def __init__(self, runtime: "Runtime"):
        self.r = runtime
        self.counts: dict[str, int] = {}

    def _truth_correct(self, replica: str, now: int) -> bool:
        inj = self.r.injector
        if inj.is_crashed(replica):
            return False
        for spec in inj.specs:
            if spec.kind in BYZANTINE_KINDS and replica in spec.bound_replicas \
                    and spec.active(now):
                return False
        return True

    def emit(self, src: str, body: dict) -> None:
        body = dict(body)
        body.setdefault("replica", src)
        self.counts[body["type"]] = self.counts.get(body["type"], 0) + 1
        self.r.publish(src, "ot.audit", body)
        self.r.publish("recorder", "siem.events", dict(body))
        if body["type"] == "view_change_started":
            suspected = body.get("suspected")
            if suspected and self._truth_correct(suspected, self.r.sched.now):
                fs = {"type": "false_suspicion", "replica": src,
                      "suspected": suspected,
                      "from_view": body.get("from_view"),
                      "to_view": body.get("to_view")}
                self.counts["false_suspicion"] = \
                    self.counts.get("false_suspicion", 0) + 1
                self.r.publish("recorder", "ot.audit", fs)
                self.r.publish("recorder", "siem.events", dict(fs))


class Manager:
    """BFT manager: the single supervisory client, decision confirmer and
    the sole authority over advisory actuation."""

    def __init__(self, runtime: "Runtime"):
        self.r = runtime
        self.name = "manager"
        self.membership = list(runtime.scenario.membership)
        self.f = runtime.scenario.f
        self.rid_counter = 0
        self.target_setpoint = runtime.scenario.data["plant"]["setpoint0"]
        self._decision_votes: dict[tuple, set] = {}
        self._actuated: set[int] = set()
        self.decisions: dict[str, ManagerDecision] = {}
        self.pending_advisories: dict[str, Advisory] = {}
        self.confirmed_log: list[tuple[int, str, dict]] = []
        lanes_cfg = runtime.scenario.data["lanes"]["consensus"]
        ref_ms = lanes_cfg.get("post_gst_bound_ms", 5) \
            if lanes_cfg.get("kind") == "partial_sync" \
            else max(2 * lanes_cfg.get("base_delay_us", 200) / MS, 1.0)
        pol = runtime.scenario.data["policy"]
        self.policy = Policy(
            auto_timeout_factor=tuple(pol["auto_timeout_factor"]),
            require_human=frozenset(pol["require_human"]),
            min_timeout_ms=pol["min_timeout_ms"],
            reference_bound_ms=ref_ms,
        )

    # -- workload ---------------------------------------------------------

    def on_control(self, event) -> None:
        payload = event.payload
        if payload[0] == "request":
            value = payload[1]
            if value is not None:
                self.target_setpoint = value
            self.submit_command({"kind": "setpoint", "value": self.target_setpoint})
        elif payload[0] == "confirm_advisory":
            self.confirm_advisory(payload[1], payload[2])
        elif payload[0] == "submit_replacement":
            self.submit_command({"kind": "replace", "remove": payload[1],
                                 "add": payload[2]})

    def submit_command(self, command: dict) -> tuple:
        self.rid_counter += 1
        request = {"client": self.name, "rid": self.rid_counter,
                   "command": command}
        rid_key = cs.request_id(request)
        self.r.recorder.emit(self.name, {
            "type": "request", "request_id": list(rid_key), "command": command})
        body = cs.request_body(self.name, request)
        self.r.net.broadcast(self.name, self.membership, body)
        return rid_key

    # -- decision confirmation -> actuation --------------------------------

    def on_audit(self, record: Record) -> None:
        body = record.body
        if body.get("type") != "decision":
            return
        key = (body["seq"], body["digest"])
        votes = self._decision_votes.setdefault(key, set())
        votes.add(body["replica"])
        if len(votes) == self.f + 1 and body["seq"] not in self._actuated:
            self._actuated.add(body["seq"])
            command = body["command"]
            self.confirmed_log.append((body["seq"], body["digest"], command))
            self.r.publish(self.name, "ot.actuation", {
                "seq": body["seq"], "command": command,
                "digest": body["digest"], "confirmations": sorted(votes)})
            if command.get("kind") == "replace":
                self._drive_replacement(command)

    def _drive_replacement(self, command: dict) -> None:
        old, new = command["remove"], command["add"]
        if old in self.membership:
            self.membership[self.membership.index(old)] = new
        body = {"kind": cs.ACTIVATE, "sender": self.name,
                "membership": list(self.membership), "view": 0}
        self.r.net.send(self.name, new, body)

    # -- advisories ----------------------------------------------------------

    def on_advisory(self, record: Record) -> None:
        adv = Advisory.from_json(record.body)
        self.review(adv)

    def review(self, adv: Advisory) -> ManagerDecision:
        if adv.id in self.decisions:
            raise AlreadyDecided(adv.id)
        verdict, rationale = self.policy.review(adv)
        if verdict == DEFER and self.r.auto_confirm:
            verdict, rationale = APPLY, rationale + " (auto-confirmed)"
        operator = "auto-confirm" if "(auto-confirmed)" in rationale else "policy"
        decision = ManagerDecision(adv.id, verdict, rationale, operator=operator)
        if verdict == DEFER:
            self.pending_advisories[adv.id] = adv
        self.decisions[adv.id] = decision
        self.r.recorder.emit(self.name, decision.to_json())
        if verdict == APPLY:
            self.apply_decision(adv, decision)
        return decision

    def confirm_advisory(self, advisory_id: str, approve: bool) -> None:
        adv = self.pending_advisories.pop(advisory_id, None)
        if adv is None:
            return
        decision = self.decisions[advisory_id]
        decision.verdict = APPLY if approve else REJECT
        decision.operator = "human"
        decision.rationale += "; human confirmation"
        self.r.recorder.emit(self.name, decision.to_json())
        if approve:
            self.apply_decision(adv, decision)

    def apply_decision(self, adv: Advisory, decision: ManagerDecision) -> None:
        rec = adv.recommendation
        if isinstance(rec, ReplicaReplacement):
            spares = [s for s in self.r.scenario.spares
                      if s not in self.membership]
            add = rec.add or (spares[0] if spares else None)
            check_membership_delta(self.membership, rec.remove, add,
                                   3 * self.f + 1)
            self.submit_command({"kind": "replace", "remove": rec.remove,
                                 "add": add, "decision_ref": adv.id})
        else:
            decision.applied_delta = rec.as_dict()
            for path, value in rec.as_dict().items():
                param = path.split(".", 1)[1] if "." in path else path
                self.submit_command({"kind": "config", "param": param,
                                     "value": value, "decision_ref": adv.id})


class TwinComponent:
    """Live mirror plus the experiment engine, wired to twin-side topics."""

    def __init__(self, runtime: "Runtime"):
        self.r = runtime
        self.name = "twin"
        self.twin = Twin(runtime.scenario, executor=runtime.execute_whatif,
                         run_id=runtime.run_id)
        self.reports: list = []
        self.maps: list = []
        self.advisories: list[Advisory] = []

    def on_record(self, record: Record) -> None:
        self.twin.ingest(record)

    def on_control(self, event) -> None:
        if event.payload[0] == "job":
            self.run_job(event.payload[1])

    def run_job(self, job: dict) -> dict:
        snap = self.twin.snapshot()
        horizon = int(job.get("horizon_ms", 1000) * MS)
        if job["kind"] == "what_if":
            report = self.twin.what_if(snap, job.get("delta", {}),
                                       job.get("faults", []), horizon)
            self.reports.append(report)
            self.r.publish(self.name, "twin.results", {
                "type": "whatif_report", **report.to_json()})
            adv = advisory_from_report(report, source=self.r.run_id)
            result = report.to_json()
        else:
            vmap = self.twin.sweep(snap, job["axes"],
                                   job.get("faults_template", []), horizon)
            self.maps.append(vmap)
            self.r.publish(self.name, "twin.results", {
                "type": "vulnerability_map", **vmap.to_json()})
            adv = advisory_from_map(vmap, self.r.scenario.data,
                                    source=self.r.run_id)
            result = vmap.to_json()
        if adv is not None:
            from .advisory import resolve_evidence
            known = {m.id for m in self.maps} | {w.id for w in self.reports}
            resolve_evidence(adv, known)
            self.advisories.append(adv)
            self.r.publish(self.name, "twin.advisory", adv.to_json())
        return result


class Runtime:
    """One fully wired simulation instance."""

    def __init__(self, scenario: Scenario, seed: int | None = None,
                 store_root: str | Path | None = None,
                 external_events: list[dict] | None = None,
                 init: dict | None = None,
                 twin_enabled: bool | None = None,
                 auto_confirm: bool = False,
                 run_id: str = "run",
                 extra_faults: list[dict] | None = None,
                 pollable: bool = True,
                 replay_log: list[dict] | None = None):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.run_id = run_id
        self.auto_confirm = auto_confirm
        self.pollable = pollable
        data = scenario.data

        self.sched = Scheduler(self.seed)
        self.keyring = KeyRing(derive_seed(self.seed, "keys"))
        scale = Fraction(data["twin"]["time_scale"])
        self.mapping = TimeMapping(epoch=0, scale=scale)
        self.gateway = TimeGateway(self.mapping)
        self.reorder = ReorderBuffer(int(data["twin"]["reorder_window_ms"] * MS))

        specs = [FaultSpec.from_json(s.to_json()) for s in scenario.fault_specs]
        if extra_faults:
            from .scenario import _fault_spec_from_json
            errs: list[str] = []
            for i, fd in enumerate(extra_faults):
                spec = _fault_spec_from_json(fd, 1000 + i, errs)
                if spec is not None:
                    specs.append(spec)
            if errs:
                raise ValueError("; ".join(errs))
        self.injector = FaultInjector(specs, self.keyring,
                                      membership=list(scenario.membership))

        self.net = Network(self.sched, self.keyring, self.mapping,
                           injector=self.injector)
        for lane in _build_lanes(scenario):
            self.net.add_lane(lane)

        self.policy = AccessPolicy()
        self.broker = Broker(self.policy, root=store_root, sched=self.sched)
        self.sched.register("feed", self._on_feed)

        self.rt = Facade(self)
        self.recorder = Recorder(self)

        cfg = cs.ConsensusConfig(
            f=data["consensus"]["f"],
            timeout=int(data["consensus"]["timeout_ms"] * MS),
            checkpoint_interval=int(data["consensus"]["checkpoint_interval"]),
            pipeline_depth=int(data["consensus"]["pipeline_depth"]),
        )
        self.replicas: dict[str, cs.Replica] = {}
        for rid in scenario.membership:
            self._add_replica(rid, copy.deepcopy(cfg), active=True)
        for rid in scenario.spares:
            self._add_replica(rid, copy.deepcopy(cfg), active=False)

        init = init or {}
        plant_cfg = data["plant"]
        plant = PlantState(
            level=float(init.get("level0", plant_cfg["level0"])),
            capacity=float(plant_cfg["capacity"]),
            inflow_rate=float(plant_cfg["inflow_rate"]),
            outflow_rate=float(plant_cfg["outflow_rate"]),
        )
        plc = PlcState(
            setpoint=float(init.get("setpoint0", plant_cfg["setpoint0"])),
            watchdog_cycles=int(plant_cfg["watchdog_cycles"]),
            cycle_period=int(plant_cfg["cycle_ms"] * MS),
            safety_low=float(plant_cfg["safety_low"]),
            safety_high=float(plant_cfg["safety_high"]),
            gain=float(plant_cfg["gain"]),
        )
        self.plant = PlantComponent("plc", plant, plc, self.rt,
                                    sensor_noise=float(plant_cfg["sensor_noise"]),
                                    noise_stream="plc/noise")
        self.sched.register("plc", self.plant.on_control)
        self.sched.rng.register("plc/noise")

        self.manager = Manager(self)
        self.sched.register("manager", self.manager.on_control)

        enabled = data["twin"]["enabled"] if twin_enabled is None else twin_enabled
        self.twin_component: TwinComponent | None = None
        if enabled:
            self.twin_component = TwinComponent(self)
            self.sched.register("twin", self.twin_component.on_control)

        self._subscribe_all()
        self._schedule_faults()
        self._schedule_workload()
        # External inputs are drained at fixed poll boundaries so the event-id
        # sequence never depends on when a console command arrived; that is
        # what makes (scenario, seed, ext-event log) -> report hash closed.
        self._ext_queue: list[tuple[int, int, dict]] = []
        self._ext_seq = 0
        self.external_events: list[dict] = []
        if pollable:
            self.sched.register("extpoll", self._on_extpoll)
        if replay_log is not None:
            # replaying: the log already contains the scenario-declared
            # events that fired, with their effective (quantized) times
            seed_events = list(replay_log)
        else:
            seed_events = (list(scenario.data["external_events"])
                           + list(external_events or []))
        for ev in seed_events:
            self.add_external_event(ev)
        self._finished = False
        self._results: dict | None = None

    # -- wiring -----------------------------------------------------------

    def _add_replica(self, rid: str, cfg, active: bool) -> None:
        replica = cs.Replica(rid, list(self.scenario.membership), cfg,
                             self.rt, active=active)
        self.replicas[rid] = replica
        self.net.attach(rid, replica.on_envelope)
        self.sched.register(rid, replica.on_control)

    def _subscribe_all(self) -> None:
        self.net.attach("manager", lambda env: None)
        self.broker.subscribe("manager", "ot.audit", 0, self.manager.on_audit)
        self.broker.subscribe("manager", "twin.advisory", 0,
                              self.manager.on_advisory)
        self.broker.subscribe("plc", "ot.actuation", 0, self.plant.on_actuation)
        if self.twin_component is not None:
            self.broker.subscribe("twin", "ot.telemetry", 0,
                                  self.twin_component.on_record)
            self.broker.subscribe("twin", "ot.audit", 0,
                                  self.twin_component.on_record)

    def _schedule_faults(self) -> None:
        self.sched.register("faultctl", self._on_faultctl)
        for spec in self.injector.specs:
            if spec.kind is FaultKind.CRASH:
                start, end = spec.window
                self.sched.schedule(start, "faultctl", ("crash", spec.id,
                                                        spec.bound_replicas))
                if end < 2**61:
                    self.sched.schedule(end, "faultctl",
                                        ("recover", spec.bound_replicas))
            elif spec.kind is FaultKind.PARTITION:
                start, end = spec.window
                groups = [set(g) for g in spec.params.get("groups", [])]
                self.sched.schedule(start, "faultctl",
                                    ("partition", groups, end))

    def _on_faultctl(self, event) -> None:
        kind = event.payload[0]
        now = self.sched.now
        if kind == "crash":
            _, spec_id, rids = event.payload
            for rid in rids:
                if self.injector.crash(spec_id, rid, now):
                    self.sched.schedule(now, rid, ("crash",))
        elif kind == "recover":
            for rid in event.payload[1]:
                if self.injector.recover(rid, now):
                    self.sched.schedule(now, rid, ("recover",))
        elif kind == "partition":
            _, groups, until = event.payload
            self.net.partition(groups, until)
        elif kind == "inject":
            self._on_faultctl_inject(event.payload[1])

    def _schedule_workload(self) -> None:
        wl = self.scenario.data["workload"]
        duration = self.scenario.duration
        period = int(wl["period_ms"] * MS)
        if period > 0:
            t = int(wl["start_ms"] * MS)
            issued = 0
            while t < duration and (wl["count"] == 0 or issued < wl["count"]):
                self.sched.schedule(t, "manager", ("request", None))
                t += period
                issued += 1
        for at_ms, value in wl["setpoints"]:
            self.sched.schedule(int(at_ms * MS), "manager",
                                ("request", float(value)))

    def add_external_event(self, ev: dict) -> int:
        """Queue an external input; it takes effect at the next poll boundary
        at or after its requested time and is logged to ext.events there.
        Returns the effective time in ms."""
        if not self.pollable:
            raise ValueError("this runtime accepts no external events")
        if ev.get("kind") not in ("operator_reset", "inject_fault",
                                  "confirm_advisory", "setpoint",
                                  "replace_replica", "job"):
            raise ValueError(f"unknown external event kind {ev.get('kind')!r}")
        base = max(int(ev["at_ms"] * MS), self.sched.now)
        eff = ((base + EXT_QUANTUM - 1) // EXT_QUANTUM) * EXT_QUANTUM
        if eff <= self.sched.now:
            # the poll at this boundary already fired; land on the next one
            eff += EXT_QUANTUM
        ev = dict(ev)
        ev["at_ms"] = eff // MS
        self._ext_seq += 1
        self._ext_queue.append((eff, self._ext_seq, ev))
        self._ext_queue.sort(key=lambda e: (e[0], e[1]))
        return ev["at_ms"]

    def _on_extpoll(self, event) -> None:
        now = self.sched.now
        due = [e for e in self._ext_queue if e[0] <= now]
        self._ext_queue = [e for e in self._ext_queue if e[0] > now]
        for _, _, ev in due:
            self.external_events.append(dict(ev))
            self.publish("recorder", "ext.events", dict(ev))
            self._dispatch_external(ev)

    def _dispatch_external(self, ev: dict) -> None:
        now = self.sched.now
        kind = ev["kind"]
        if kind == "operator_reset":
            self.sched.schedule(now, "plc", ("operator_reset",))
        elif kind == "inject_fault":
            self.sched.schedule(now, "faultctl", ("inject", ev["spec"]))
        elif kind == "confirm_advisory":
            self.sched.schedule(now, "manager",
                                ("confirm_advisory", ev["advisory_id"],
                                 bool(ev.get("approve", True))))
        elif kind == "setpoint":
            self.sched.schedule(now, "manager", ("request", float(ev["value"])))
        elif kind == "replace_replica":
            self.sched.schedule(now, "manager",
                                ("submit_replacement", ev["remove"], ev["add"]))
        elif kind == "job":
            self.sched.schedule(now, "twin", ("job", ev["job"]))

    # -- record path ---------------------------------------------------------

    def publish(self, src: str, topic: str, body: dict) -> None:
        self.policy.require(src, topic, "publish")
        check_schema(topic, body)
        rec = Record(topic=topic, offset=-1, stamp=None, producer=src,
                     body=body, authenticator="")
        self.gateway.canonical_stamp(rec, self.sched.now,
                                     producer_logical=self.net.clock(src).tick())
        rec.authenticator = self.keyring.tag(src, body)
        lane = self.net.lane_for(src, "broker") if src != "broker" else None
        delay = 0
        if lane is not None:
            rng = self.sched.rng.get(f"lane/{lane.name}/{src}")
            delay = lane.sample_delay(rng, self.sched.now)
        self.sched.schedule(self.sched.now + delay, "feed", ("arrive", rec),
                            emitter=src)

    def _on_feed(self, event) -> None:
        kind = event.payload[0]
        if kind == "arrive":
            rec = event.payload[1]
            for released in self.reorder.push(rec, self.sched.now):
                self.broker.append(released)
            self.sched.schedule(self.sched.now + self.reorder.window + 1,
                                "feed", ("flush",))
        elif kind == "flush":
            for released in self.reorder.release(self.sched.now):
                self.broker.append(released)

    def _on_faultctl_inject(self, spec_dict: dict) -> None:
        from .scenario import _fault_spec_from_json
        errs: list[str] = []
        spec = _fault_spec_from_json(spec_dict, len(self.injector.specs), errs)
        if spec is not None:
            self.injector.add_spec(spec)

    # -- execution ----------------------------------------------------------

    def start(self, duration: int | None = None) -> int:
        """Arm the run: plant cycles, poll boundaries, twin jobs. Returns the
        duration so callers can step toward it."""
        duration = duration if duration is not None else self.scenario.duration
        self._duration = duration
        self._drain = max(DRAIN_US, 2 * self.reorder.window + 20 * MS)
        self.plant.start()
        if self.pollable:
            for t in range(0, duration + self._drain + EXT_QUANTUM, EXT_QUANTUM):
                self.sched.schedule(t, "extpoll", ("poll",))
        # jobs without an explicit time run right at the end of the window
        for job in self.scenario.data["jobs"]:
            at = int(job.get("at_ms", duration // MS) * MS)
            if self.twin_component is not None:
                self.sched.schedule(min(at, duration), "twin", ("job", job))
        return duration

    def step_to(self, t: int) -> int:
        return self.sched.run_until(min(t, self._duration))

    def finish(self) -> dict:
        self.sched.run_until(self._duration + self._drain)
        # the injection trace lands in the SIEM stream so the report stays
        # fully reconstructible from the stored log
        for entry in self.injector.trace:
            body = {"type": "fault_injected", **entry.to_json()}
            rec = Record(topic="siem.events", offset=-1, stamp=None,
                         producer="recorder", body=body)
            self.gateway.canonical_stamp(
                rec, self.sched.now,
                producer_logical=self.net.clock("recorder").tick())
            rec.authenticator = self.keyring.tag("recorder", body)
            rec.arrival = self.sched.now
            self.broker.append(rec)
        self._finished = True
        self._results = self.collect_metrics()
        return self._results

    def run(self, duration: int | None = None) -> dict:
        self.start(duration)
        self.sched.run_until(self._duration)
        return self.finish()

    # -- ground truth + metrics ------------------------------------------------

    def ground_truth_byzantine(self) -> set:
        out = set()
        for spec in self.injector.specs:
            if spec.kind in (FaultKind.EQUIVOCATE, FaultKind.STATE_LIE,
                             FaultKind.SELECTIVE_DROP):
                out |= set(spec.bound_replicas)
        return out

    def safety_violation(self) -> bool:
        logs: dict[int, str] = {}
        for rid, rep in self.replicas.items():
            for seq, entry in rep.decided.items():
                if seq in logs and logs[seq] != entry["digest"]:
                    return True
                logs.setdefault(seq, entry["digest"])
        return False

    def collect_metrics(self) -> dict:
        duration = self.scenario.duration
        submits: dict[tuple, int] = {}
        latencies: list[int] = []
        decided_rids: set = set()
        for rec in self.broker.logs["ot.audit"].records:
            body = rec.body
            if body.get("type") == "request":
                submits[tuple(body["request_id"])] = rec.stamp.real
        confirm_votes: dict = {}
        confirmed: list = []
        for rec in self.broker.logs["ot.audit"].records:
            body = rec.body
            if body.get("type") != "decision":
                continue
            key = (body["seq"], body["digest"])
            votes = confirm_votes.setdefault(key, set())
            votes.add(body["replica"])
            if len(votes) == self.scenario.f + 1:
                confirmed.append((body["seq"], body["digest"], body["command"]))
                rid = tuple(body.get("request_id", ()))
                if rid in submits and rid not in decided_rids:
                    decided_rids.add(rid)
                    latencies.append(rec.stamp.real - submits[rid])
        undecided_ages = [max(duration - at, 0)
                          for rid, at in submits.items()
                          if rid not in decided_rids]
        counts = self.recorder.counts
        telem = self.broker.logs["ot.telemetry"].records
        excursions = sum(1 for r in telem
                         if r.body.get("true_level", r.body["level"]) <= 0.0
                         or r.body.get("true_level", r.body["level"])
                         >= self.scenario.data["plant"]["capacity"])
        failsafe = any(r.body["mode"] == FAILSAFE for r in telem)
        return {
            "decisions": len(confirmed),
            "view_changes": counts.get("view_change_started", 0),
            "false_suspicions": counts.get("false_suspicion", 0),
            "deadline_violations": counts.get("deadline_violation", 0),
            "requests_submitted": len(submits),
            "requests_decided": len(decided_rids),
            "request_latencies": sorted(latencies),
            "undecided_ages": sorted(undecided_ages),
            "plant_excursions": excursions,
            "failsafe_engaged": failsafe,
            "safety_violation": self.safety_violation(),
            "event_log_hash": self.broker.content_hash(),
            "records_per_topic": {t: self.broker.logs[t].head + 1
                                  for t in TOPICS},
        }

    def live_digest(self) -> dict:
        votes: dict = {}
        confirmed: list = []
        for rid, rep in self.replicas.items():
            for seq, entry in rep.decided.items():
                key = (seq, entry["digest"])
                votes.setdefault(key, set()).add(rid)
        for (seq, digest), who in votes.items():
            if len(who) >= self.scenario.f + 1:
                confirmed.append([seq, digest])
        confirmed.sort(key=lambda e: e[0])
        return {
            "decisions": confirmed,
            "modes": [list(m) for m in self.plant.mode_history],
            "cursors": {
                "ot.telemetry": self.broker.head("ot.telemetry") + 1,
                "ot.audit": self.broker.head("ot.audit") + 1,
            },
        }

    # -- report ------------------------------------------------------------------

    def build_report(self) -> dict:
        """Everything in here is reconstructible from the stored record log;
        the hash is over the canonical JSON of the whole document."""
        metrics = self._results if self._results is not None \
            else self.collect_metrics()
        confirmed = []
        votes: dict = {}
        for rec in self.broker.logs["ot.audit"].records:
            body = rec.body
            if body.get("type") != "decision":
                continue
            key = (body["seq"], body["digest"])
            who = votes.setdefault(key, set())
            who.add(body["replica"])
            if len(who) == self.scenario.f + 1:
                confirmed.append([body["seq"], body["digest"], body["command"],
                                  body["view"]])
        confirmed.sort(key=lambda e: e[0])

        twin_block: dict = {"enabled": self.twin_component is not None}
        if self.twin_component is not None:
            tc = self.twin_component
            try:
                twin_block["divergence"] = tc.twin.divergence(self.live_digest())
            except Exception as exc:
                twin_block["divergence"] = f"error: {exc}"
            try:
                twin_block["anomalies"] = tc.twin.detect_anomalies(
                    horizon_us=self._duration)
            except Exception:
                twin_block["anomalies"] = []
            twin_block["state_liars"] = tc.twin.state_liars()
            twin_block["whatif_reports"] = [r.to_json() for r in tc.reports]
            twin_block["maps"] = [m.to_json() for m in tc.maps]
            twin_block["advisories"] = [a.to_json() for a in tc.advisories]
        twin_block["manager_decisions"] = [
            d.to_json() for _, d in sorted(self.manager.decisions.items())]

        violations = []
        if metrics["safety_violation"]:
            violations.append("safety")
        bound = (self.scenario.data["twin"]["liveness_bound_factor"]
                 * self.scenario.data["consensus"]["timeout_ms"] * MS)
        if any(a > bound for a in metrics["undecided_ages"]) or \
                any(l > bound for l in metrics["request_latencies"]):
            violations.append("liveness")

        doc = {
            "schema_version": 1,
            "run_id": self.run_id,
            "scenario_name": self.scenario.name,
            "scenario": self.scenario.data,
            "scenario_hash": self.scenario.hash(),
            "seed": self.seed,
            "duration_us": self._duration,
            "event_log_hash": metrics["event_log_hash"],
            "records_per_topic": metrics["records_per_topic"],
            "metrics": {k: v for k, v in metrics.items()
                        if k not in ("event_log_hash", "records_per_topic")},
            "decisions": confirmed,
            "injection_trace": self.injector.trace_json(),
            "external_events": list(self.external_events),
            "twin": twin_block,
            "violations": violations,
        }
        doc["report_hash"] = hashlib.blake2b(
            json.dumps(doc, sort_keys=True, separators=(",", ":"),
                       default=str).encode(), digest_size=16).hexdigest()
        return doc

    # -- nested what-if execution ------------------------------------------------

    def execute_whatif(self, scenario_data: dict, faults: list[dict],
                       horizon_us: int, init: dict, stream_tag: str) -> dict:
        data = copy.deepcopy(scenario_data)
        data["duration_ms"] = horizon_us // MS
        data["twin"] = dict(data["twin"])
        data["twin"]["enabled"] = False
        data["jobs"] = []
        data["external_events"] = []
        nested = validate(data)
        seed = derive_seed(self.seed, f"whatif/{stream_tag}")
        rt = Runtime(nested, seed=seed, store_root=None, init=init,
                     twin_enabled=False, run_id=f"{self.run_id}/{stream_tag}",
                     extra_faults=faults, pollable=False)
        return rt.run()


def execute_standalone(scenario_data: dict, faults: list[dict],
                       horizon_us: int, init: dict, stream_tag: str,
                       master_seed: int = 0, run_id: str = "twin") -> dict:
    """Executor for a Twin used outside a live Runtime (service / CLI)."""
    data = copy.deepcopy(scenario_data)
    data["duration_ms"] = horizon_us // MS
    data["twin"] = dict(data["twin"])
    data["twin"]["enabled"] = False
    data["jobs"] = []
    data["external_events"] = []
    nested = validate(data)
    seed = derive_seed(master_seed, f"whatif/{stream_tag}")
    rt = Runtime(nested, seed=seed, store_root=None, init=init,
                 twin_enabled=False, run_id=f"{run_id}/{stream_tag}",
                 extra_faults=faults, pollable=False)
    return rt.run()
