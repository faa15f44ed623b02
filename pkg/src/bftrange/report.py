"""Run-report persistence, delimited exports, and figure rendering.

A persisted run directory holds the canonical report.json next to the
record store; the report path renders matplotlib figures (plant timeline,
consensus timeline, vulnerability heatmaps) to files alongside the CSV
exports, so a run can be inspected without the service.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .broker import AccessPolicy, Broker, Record
from .scenario import validate
from .sim import SECOND
from .twin import OUTCOMES

# Fixed outcome palette so screenshots stay comparable across runs.
OUTCOME_COLORS = {
    "SafeLive": "#2e7d32",
    "FailSafeEngaged": "#7b1fa2",
    "FalseSuspicionStorm": "#ef6c00",
    "LivenessViolation": "#c62828",
    "SafetyViolation": "#4e0d0d",
}
OUTCOME_INDEX = {name: i for i, name in enumerate(OUTCOMES)}


def canonical_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=1, default=str)


def save_run(report: dict, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "report.json"
    path.write_text(canonical_json(report))
    return path


def load_report(run_dir: str | Path) -> dict:
    return json.loads((Path(run_dir) / "report.json").read_text())


def open_store(run_dir: str | Path) -> Broker:
    return Broker(AccessPolicy(), root=Path(run_dir) / "store")


def write_metrics_csv(report: dict, out_dir: Path) -> Path:
    path = out_dir / "metrics.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for key in sorted(report["metrics"]):
            value = report["metrics"][key]
            if isinstance(value, list):
                value = len(value)
            w.writerow([key, value])
        w.writerow(["event_log_hash", report["event_log_hash"]])
        w.writerow(["report_hash", report["report_hash"]])
    return path


def write_telemetry_csv(records: list[Record], out_dir: Path) -> Path:
    path = out_dir / "telemetry.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "level", "true_level", "valve", "mode", "setpoint"])
        for rec in records:
            b = rec.body
            w.writerow([rec.stamp.real / SECOND, b.get("level"),
                        b.get("true_level"), b.get("valve"), b.get("mode"),
                        b.get("setpoint")])
    return path


def render_plant_timeline(records: list[Record], report: dict,
                          out_dir: Path) -> Path | None:
    if not records:
        return None
    t = [r.stamp.real / SECOND for r in records]
    level = [r.body.get("true_level", r.body["level"]) for r in records]
    setpoint = [r.body.get("setpoint") for r in records]
    modes = [r.body["mode"] for r in records]

    fig, ax = plt.subplots(figsize=(9, 3.2))
    ax.plot(t, level, lw=1.2, label="level")
    ax.plot(t, setpoint, lw=0.9, ls="--", color="gray", label="setpoint")
    cap = report["scenario"]["plant"]["capacity"]
    ax.axhline(cap, color="k", lw=0.6)
    # shade fail-safe intervals
    start = None
    for i, m in enumerate(modes):
        if m == "FailSafe" and start is None:
            start = t[i]
        elif m != "FailSafe" and start is not None:
            ax.axvspan(start, t[i], color="#7b1fa2", alpha=0.15)
            start = None
    if start is not None:
        ax.axvspan(start, t[-1], color="#7b1fa2", alpha=0.15,
                   label="fail-safe")
    ax.set_xlabel("simulated time [s]")
    ax.set_ylabel("tank level")
    ax.set_title(f"plant timeline - {report['scenario_name']}")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    path = out_dir / "plant_timeline.png"
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_consensus_timeline(audit: list[Record], report: dict,
                              out_dir: Path) -> Path | None:
    dec_t, dec_seq = [], []
    vc_t, fs_t = [], []
    for rec in audit:
        b = rec.body
        if b.get("type") == "decision":
            dec_t.append(rec.stamp.real / SECOND)
            dec_seq.append(b["seq"])
        elif b.get("type") == "view_change_started":
            vc_t.append(rec.stamp.real / SECOND)
        elif b.get("type") == "false_suspicion":
            fs_t.append(rec.stamp.real / SECOND)
    fig, ax = plt.subplots(figsize=(9, 3.2))
    if dec_t:
        ax.plot(dec_t, dec_seq, ".", ms=3.5, label="decisions")
    for x in vc_t:
        ax.axvline(x, color="#ef6c00", lw=0.7, alpha=0.6)
    if fs_t:
        ax.plot(fs_t, [0.5] * len(fs_t), "v", color="#c62828", ms=5,
                label="false suspicion")
    ax.set_xlabel("simulated time [s]")
    ax.set_ylabel("decided sequence")
    ax.set_title("consensus timeline (view changes in orange)")
    if dec_t or fs_t:
        ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    path = out_dir / "consensus_timeline.png"
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def write_map_csv(vmap: dict, out_dir: Path) -> Path:
    path = out_dir / f"map_{vmap['id']}.csv"
    axes = vmap["axes"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([ax["name"] for ax in axes] + ["outcome"])
        for key in sorted(vmap["cells"],
                          key=lambda k: [int(c) for c in k.split(",")]):
            coords = [int(c) for c in key.split(",")]
            row = [axes[d]["values"][c] for d, c in enumerate(coords)]
            w.writerow(row + [vmap["cells"][key]["outcome"]])
    return path


def render_map(vmap: dict, out_dir: Path) -> Path | None:
    axes = vmap["axes"]
    if len(axes) != 2:
        return None
    nx, ny = len(axes[0]["values"]), len(axes[1]["values"])
    grid = np.zeros((ny, nx))
    for key, cell in vmap["cells"].items():
        i, j = (int(c) for c in key.split(","))
        grid[j, i] = OUTCOME_INDEX[cell["outcome"]]
    from matplotlib.colors import ListedColormap
    cmap = ListedColormap([OUTCOME_COLORS[name] for name in OUTCOMES])
    fig, ax = plt.subplots(figsize=(5.4, 4.4))
    ax.imshow(grid, origin="lower", cmap=cmap, vmin=0, vmax=len(OUTCOMES) - 1,
              aspect="auto")
    ax.set_xticks(range(nx))
    ax.set_xticklabels(axes[0]["values"], fontsize=7)
    ax.set_yticks(range(ny))
    ax.set_yticklabels(axes[1]["values"], fontsize=7)
    ax.set_xlabel(axes[0]["name"])
    ax.set_ylabel(axes[1]["name"])
    ax.set_title(f"vulnerability map {vmap['id']}")
    handles = [plt.Rectangle((0, 0), 1, 1, color=OUTCOME_COLORS[n])
               for n in OUTCOMES]
    ax.legend(handles, OUTCOMES, fontsize=6, loc="upper left",
              bbox_to_anchor=(1.02, 1.0))
    fig.tight_layout()
    path = out_dir / f"map_{vmap['id']}.png"
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_run(run_dir: str | Path, out_dir: str | Path | None = None,
               broker: Broker | None = None) -> list[Path]:
    """The full report path: CSVs plus figures next to the report."""
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir else run_dir
    out.mkdir(parents=True, exist_ok=True)
    report = load_report(run_dir)
    own_broker = broker is None
    if broker is None:
        broker = open_store(run_dir)
    telemetry = broker.logs["ot.telemetry"].records
    audit = broker.logs["ot.audit"].records
    written = [write_metrics_csv(report, out)]
    written.append(write_telemetry_csv(telemetry, out))
    p = render_plant_timeline(telemetry, report, out)
    if p:
        written.append(p)
    p = render_consensus_timeline(audit, report, out)
    if p:
        written.append(p)
    for vmap in report.get("twin", {}).get("maps", []):
        written.append(write_map_csv(vmap, out))
        p = render_map(vmap, out)
        if p:
            written.append(p)
    if own_broker:
        for log in broker.logs.values():
            log.close()
    return written


def export_siem(broker: Broker, out_file: str | Path, lo: int = 0,
                hi: int | None = None) -> Path:
    """Newline-delimited structured events with a stable field order."""
    head = broker.head("siem.events")
    hi = head if hi is None else hi
    path = Path(out_file)
    path.parent.mkdir(parents=True, exist_ok=True)
    if hi < lo:
        path.write_text("")
        return path
    records = broker.replay("siem.events", lo, hi)
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True,
                                separators=(",", ":")) + "\n")
    return path


def record_verified_configs(report: dict, out_root: str | Path) -> list[str]:
    """After a run, archive every applied advisory as a verified
    configuration in the Historian, with the run report as evidence."""
    from .broker import Historian

    applied = [d for d in report.get("twin", {}).get("manager_decisions", [])
               if d.get("verdict") == "Apply" and d.get("applied_delta")]
    if not applied:
        return []
    known = {report["run_id"]}
    historian = Historian(Path(out_root) / "historian.jsonl",
                          evidence_resolver=lambda ref: ref in known)
    entries = []
    for decision in applied:
        config = dict(report["scenario"]["consensus"])
        config.update(decision["applied_delta"])
        entries.append(historian.put(
            {"advisory": decision["advisory_id"], "config": config},
            evidence=[report["run_id"]],
            verdict="Verified",
        ))
    return entries


def replay_run(run_dir: str | Path, store_root: str | Path | None = None
               ) -> tuple[bool, str, str]:
    """Re-execute from (scenario, seed, external-event log); compare hashes."""
    from .runner import Runtime

    report = load_report(run_dir)
    scn = validate(report["scenario"])
    rt = Runtime(scn, seed=report["seed"], store_root=store_root,
                 replay_log=report["external_events"],
                 run_id=report["run_id"])
    rt.run(report["duration_us"])
    fresh = rt.build_report()
    return (fresh["report_hash"] == report["report_hash"],
            report["report_hash"], fresh["report_hash"])
