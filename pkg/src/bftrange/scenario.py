"""Scenario files: the single source of truth for a run.

A scenario is schema-versioned JSON covering topology (f, lanes, plant),
consensus configuration, fault specs, workload, twin thresholds, policy and
jobs.  Validation returns the exhaustive error list, not the first error,
so a scenario author sees everything wrong at once.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .faults import FaultSpec, check_fault_bound
from .sim import MS

SCHEMA_VERSION = 1

# Parameters the advisory loop and what-if deltas may touch.  Anything
# outside this set is rejected: recommendations are config deltas only,
# never actuation.
TUNABLE_PARAMS = (
    "consensus.timeout_ms",
    "consensus.checkpoint_interval",
    "consensus.pipeline_depth",
    "plant.watchdog_cycles",
    "lanes.*.base_delay_us",
    "lanes.*.jitter_bound_us",
    "lanes.*.post_gst_bound_ms",
    "lanes.*.gst_ms",
    "twin.anomaly_k",
    "twin.liveness_bound_factor",
    "twin.storm_rate",
    "faults.*.params.delay_us",
    "faults.*.params.delay_ms",
    "faults.*.window_ms",
)


class ScenarioError(Exception):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


DEFAULTS: dict = {
    "schema_version": SCHEMA_VERSION,
    "name": "unnamed",
    "seed": 0,
    "duration_ms": 10_000,
    "consensus": {
        "f": 1,
        "timeout_ms": 300,
        "checkpoint_interval": 8,
        "pipeline_depth": 1,
    },
    "lanes": {
        "consensus": {
            "kind": "deterministic",
            "base_delay_us": 200,
            "jitter_bound_us": 100,
        },
        "broker": {
            "kind": "deterministic",
            "base_delay_us": 100,
            "jitter_bound_us": 0,
        },
        "otw": {
            "kind": "partial_sync",
            "base_delay_us": 300,
            "gst_ms": 0,
            "post_gst_bound_ms": 5,
            "pre_gst_cap_ms": 200,
            "sigma": 0.8,
        },
    },
    "plant": {
        "capacity": 10.0,
        "level0": 5.0,
        "inflow_rate": 0.2,
        "outflow_rate": 0.1,
        "setpoint0": 5.0,
        "gain": 0.5,
        "cycle_ms": 100,
        "watchdog_cycles": 5,
        "safety_low": 1.0,
        "safety_high": 9.0,
        "sensor_noise": 0.0,
    },
    "workload": {
        "period_ms": 300,
        "start_ms": 200,
        "count": 0,          # 0 = keep issuing until duration
        "setpoints": [],     # optional explicit [at_ms, value] pairs
    },
    "spares": 1,
    "within_model": True,
    "exceeds_fault_bound": False,
    "faults": [],
    "twin": {
        "enabled": True,
        "calibration_ms": 3_000,
        "window_ms": 1_000,
        "anomaly_k": 3.0,
        "liveness_bound_factor": 10,
        "storm_rate": 0.2,
        "reorder_window_ms": 10,
        "time_scale": "1",
        "sweep_budget": 400,
    },
    "policy": {
        "auto_timeout_factor": [2, 10],
        "require_human": ["replace"],
        "min_timeout_ms": 2,
    },
    "external_events": [],
    "jobs": [],
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def scenario_hash(data: dict) -> str:
    return hashlib.blake2b(
        json.dumps(data, sort_keys=True, separators=(",", ":")).encode(),
        digest_size=12).hexdigest()


def path_matches(path: str, pattern: str) -> bool:
    pp, tp = path.split("."), pattern.split(".")
    if len(pp) != len(tp):
        return False
    return all(t == "*" or p == t for p, t in zip(pp, tp))


def is_tunable(path: str) -> bool:
    return any(path_matches(path, pat) for pat in TUNABLE_PARAMS)


def apply_delta(data: dict, path: str, value: Any) -> dict:
    """Return a copy of `data` with the dotted `path` set to `value`."""
    out = copy.deepcopy(data)
    node = out
    parts = path.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], (dict, list)):
            node[part] = {}
        node = node[part] if isinstance(node[part], dict) else node[int(part)]
    leaf = parts[-1]
    if isinstance(node, list):
        node[int(leaf)] = value
    else:
        node[leaf] = value
    return out


@dataclass
class Scenario:
    """Validated, defaults-filled scenario plus derived topology."""

    data: dict
    membership: list[str] = field(default_factory=list)
    spares: list[str] = field(default_factory=list)
    fault_specs: list[FaultSpec] = field(default_factory=list)

    @property
    def f(self) -> int:
        return self.data["consensus"]["f"]

    @property
    def n(self) -> int:
        return 3 * self.f + 1

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def duration(self) -> int:
        return self.data["duration_ms"] * MS

    @property
    def name(self) -> str:
        return self.data["name"]

    def hash(self) -> str:
        return scenario_hash(self.data)

    def with_delta(self, delta: dict[str, Any]) -> "Scenario":
        data = self.data
        for path, value in delta.items():
            data = apply_delta(data, path, value)
        return validate(data)


def _fault_spec_from_json(d: dict, idx: int, errors: list[str]) -> FaultSpec | None:
    try:
        spec = dict(d)
        if "window_ms" in spec:
            w = spec.pop("window_ms")
            spec["window"] = [int(w[0] * MS), int(w[1] * MS)]
        params = dict(spec.get("params", {}))
        if "delay_ms" in params:
            params["delay_us"] = int(params.pop("delay_ms") * MS)
        spec["params"] = params
        spec.setdefault("id", f"fault{idx}")
        return FaultSpec.from_json(spec)
    except Exception as exc:  # collect, don't abort
        errors.append(f"faults[{idx}]: {exc}")
        return None


def validate(raw: dict | str | Path) -> Scenario:
    """Parse and validate; raises ScenarioError carrying every problem found."""
    if isinstance(raw, (str, Path)):
        try:
            raw = json.loads(Path(raw).read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioError([f"parse error: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ScenarioError(["scenario must be a JSON object"])

    errors: list[str] = []
    if raw.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        errors.append(f"unsupported schema_version {raw.get('schema_version')}")
    data = _merge(DEFAULTS, raw)

    cons = data["consensus"]
    f = cons.get("f")
    if not isinstance(f, int) or f < 1:
        errors.append("consensus.f must be an integer >= 1")
        f = 1
    if "n" in cons and cons["n"] != 3 * f + 1:
        errors.append(
            f"consensus.n={cons['n']} violates n = 3f+1 (f={f} needs n={3 * f + 1})")
    if cons.get("timeout_ms", 0) <= 0:
        errors.append("consensus.timeout_ms must be positive")

    plant = data["plant"]
    if plant["capacity"] <= 0:
        errors.append("plant.capacity must be positive")
    if not 0 <= plant["level0"] <= plant["capacity"]:
        errors.append("plant.level0 outside [0, capacity]")
    if plant["cycle_ms"] <= 0:
        errors.append("plant.cycle_ms must be positive")
    if plant["watchdog_cycles"] < 1:
        errors.append("plant.watchdog_cycles must be >= 1")
    if not plant["safety_low"] < plant["safety_high"]:
        errors.append("plant.safety_low must be below safety_high")

    for lname, lane in data["lanes"].items():
        kind = lane.get("kind")
        if kind not in ("deterministic", "partial_sync"):
            errors.append(f"lanes.{lname}.kind must be deterministic|partial_sync")
        if lane.get("base_delay_us", 0) < 0:
            errors.append(f"lanes.{lname}.base_delay_us must be >= 0")
        if kind == "deterministic" and lane.get("jitter_bound_us", 0) < 0:
            errors.append(f"lanes.{lname}.jitter_bound_us must be >= 0")
        if kind == "partial_sync" and lane.get("post_gst_bound_ms", 1) <= 0:
            errors.append(f"lanes.{lname}.post_gst_bound_ms must be positive")

    specs: list[FaultSpec] = []
    for i, fd in enumerate(data["faults"]):
        spec = _fault_spec_from_json(fd, i, errors)
        if spec is not None:
            specs.append(spec)
    ids = [s.id for s in specs]
    if len(ids) != len(set(ids)):
        errors.append("fault spec ids must be unique")
    if data["within_model"]:
        errors.extend(check_fault_bound(specs, f, data["exceeds_fault_bound"]))

    membership = [f"r{i}" for i in range(3 * f + 1)]
    spares = [f"s{i}" for i in range(int(data.get("spares", 0)))]
    known = set(membership) | set(spares)
    for s in specs:
        for rid in s.bound_replicas:
            if rid not in known:
                errors.append(f"fault {s.id}: unknown replica {rid}")

    for i, ev in enumerate(data["external_events"]):
        if "at_ms" not in ev or "kind" not in ev:
            errors.append(f"external_events[{i}] needs at_ms and kind")

    for i, job in enumerate(data["jobs"]):
        if job.get("kind") not in ("what_if", "sweep"):
            errors.append(f"jobs[{i}].kind must be what_if|sweep")
        if job.get("kind") == "sweep":
            axes = job.get("axes", [])
            if not axes:
                errors.append(f"jobs[{i}]: sweep needs axes")
            size = 1
            for ax in axes:
                size *= max(len(ax.get("values", [])), 1)
                if ax.get("path") and not is_tunable(ax["path"]) \
                        and not ax.get("fault_param"):
                    errors.append(f"jobs[{i}]: axis path {ax.get('path')!r} "
                                  "is not a tunable parameter")
            if size > data["twin"]["sweep_budget"]:
                errors.append(f"jobs[{i}]: grid size {size} exceeds budget "
                              f"{data['twin']['sweep_budget']}")
        for path in job.get("delta", {}):
            if not is_tunable(path):
                errors.append(f"jobs[{i}]: delta path {path!r} is not tunable")

    if errors:
        raise ScenarioError(errors)
    return Scenario(data=data, membership=membership, spares=spares,
                    fault_specs=specs)


def load(path: str | Path) -> Scenario:
    return validate(path)
