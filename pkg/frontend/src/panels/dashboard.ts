// Live dashboard: plant level/mode timeline, consensus decisions/view
// changes, false-suspicion markers, anomaly flags. All series derive from
// the streamed records; reconnects resume from the last cursor.

import { Api } from "../api.js";
import { ResumingStream, StreamTransport } from "../stream.js";
import { auditMarkers, decisionSeries, levelSeries, modeBands }
  from "../timeline.js";
import { StreamRecord } from "../types.js";
import { badge, clear, el } from "./dom.js";

export class DashboardPanel {
  root: HTMLElement;
  private telemetry: StreamRecord[] = [];
  private audit: StreamRecord[] = [];
  private streams: ResumingStream[] = [];
  private plantCanvas: HTMLCanvasElement;
  private consensusCanvas: HTMLCanvasElement;
  private counters: HTMLElement;

  constructor(private api: Api, private transport: StreamTransport,
              private runId: string) {
    this.plantCanvas = el("canvas", { width: "860", height: "200" });
    this.consensusCanvas = el("canvas", { width: "860", height: "160" });
    this.counters = el("div", { class: "counters" });
    this.root = el("section", { class: "panel" },
                   el("h2", {}, `live dashboard - ${runId}`),
                   this.counters,
                   el("h3", {}, "plant level / mode"),
                   this.plantCanvas,
                   el("h3", {}, "consensus decisions / suspicions"),
                   this.consensusCanvas);
  }

  start(): void {
    this.streams.push(new ResumingStream(
      this.transport, "ot.telemetry", 0,
      (r) => { this.telemetry.push(r); this.redraw(); }));
    this.streams.push(new ResumingStream(
      this.transport, "ot.audit", 0,
      (r) => { this.audit.push(r); this.redraw(); }));
  }

  stop(): void {
    for (const s of this.streams) s.stop();
  }

  cursors(): Record<string, number> {
    return {
      "ot.telemetry": this.streams[0]?.next ?? 0,
      "ot.audit": this.streams[1]?.next ?? 0,
    };
  }

  private redraw(): void {
    this.drawPlant();
    this.drawConsensus();
    this.drawCounters();
  }

  private drawCounters(): void {
    const markers = auditMarkers(this.audit);
    const count = (kind: string) =>
      markers.filter((m) => m.kind === kind).length;
    clear(this.counters).append(
      badge(`decisions ${decisionSeries(this.audit).length}`, "#2e7d32"),
      badge(`view changes ${count("view_change_started")}`, "#ef6c00"),
      badge(`false suspicions ${count("false_suspicion")}`, "#c62828"),
      badge(`deadline violations ${count("deadline_violation")}`, "#6d4c41"),
    );
  }

  private drawPlant(): void {
    const ctx = this.plantCanvas.getContext("2d");
    if (!ctx) return;
    const W = this.plantCanvas.width, H = this.plantCanvas.height;
    ctx.clearRect(0, 0, W, H);
    const pts = levelSeries(this.telemetry);
    if (pts.length < 2) return;
    const t0 = pts[0].tMs, t1 = pts[pts.length - 1].tMs;
    const levels = pts.map((p) => p.level);
    const lo = 0, hi = Math.max(...levels, 10) * 1.05;
    const x = (t: number) => ((t - t0) / Math.max(t1 - t0, 1)) * (W - 20) + 10;
    const y = (v: number) => H - 14 - ((v - lo) / (hi - lo)) * (H - 28);

    for (const band of modeBands(this.telemetry)) {
      if (band.mode === "Normal") continue;
      ctx.fillStyle = "rgba(123,31,162,.18)";
      ctx.fillRect(x(band.fromMs), 0,
                   x(band.toMs ?? t1) - x(band.fromMs), H);
    }
    ctx.strokeStyle = "#1565c0";
    ctx.lineWidth = 1.4;
    ctx.beginPath();
    pts.forEach((p, i) => i ? ctx.lineTo(x(p.tMs), y(p.level))
                            : ctx.moveTo(x(p.tMs), y(p.level)));
    ctx.stroke();
    ctx.strokeStyle = "#9e9e9e";
    ctx.setLineDash([4, 3]);
    ctx.beginPath();
    pts.forEach((p, i) => {
      const sp = p.setpoint ?? 0;
      return i ? ctx.lineTo(x(p.tMs), y(sp)) : ctx.moveTo(x(p.tMs), y(sp));
    });
    ctx.stroke();
    ctx.setLineDash([]);
  }

  private drawConsensus(): void {
    const ctx = this.consensusCanvas.getContext("2d");
    if (!ctx) return;
    const W = this.consensusCanvas.width, H = this.consensusCanvas.height;
    ctx.clearRect(0, 0, W, H);
    const decs = decisionSeries(this.audit);
    const markers = auditMarkers(this.audit);
    if (!decs.length && !markers.length) return;
    const tEnd = Math.max(...decs.map((d) => d.tMs),
                          ...markers.map((m) => m.tMs), 1);
    const maxSeq = Math.max(...decs.map((d) => d.seq), 1);
    const x = (t: number) => (t / tEnd) * (W - 20) + 10;
    const y = (s: number) => H - 14 - (s / maxSeq) * (H - 28);

    for (const m of markers) {
      if (m.kind === "view_change_started") {
        ctx.strokeStyle = "rgba(239,108,0,.7)";
        ctx.beginPath();
        ctx.moveTo(x(m.tMs), 0);
        ctx.lineTo(x(m.tMs), H);
        ctx.stroke();
      }
    }
    ctx.fillStyle = "#2e7d32";
    for (const d of decs) {
      ctx.fillRect(x(d.tMs) - 1.5, y(d.seq) - 1.5, 3, 3);
    }
    ctx.fillStyle = "#c62828";
    for (const m of markers) {
      if (m.kind === "false_suspicion") {
        ctx.beginPath();
        ctx.moveTo(x(m.tMs), H - 4);
        ctx.lineTo(x(m.tMs) - 4, H - 12);
        ctx.lineTo(x(m.tMs) + 4, H - 12);
        ctx.fill();
      }
    }
  }
}
