// Pure transforms from record streams to drawable series. Each marker keeps
// the offset of the record it came from, so everything on screen is
// traceable to the store.

import { StreamRecord } from "./types.js";

export interface LevelPoint {
  tMs: number;
  level: number;
  setpoint: number | null;
  offset: number;
}

export interface ModeBand {
  fromMs: number;
  toMs: number | null; // null = still open
  mode: string;
}

export interface Marker {
  tMs: number;
  kind: string;
  label: string;
  offset: number;
}

export function levelSeries(records: StreamRecord[]): LevelPoint[] {
  return records
    .filter((r) => r.topic === "ot.telemetry")
    .map((r) => ({
      tMs: r.stamp.real / 1000,
      level: r.body.level as number,
      setpoint: (r.body.setpoint ?? null) as number | null,
      offset: r.offset,
    }));
}

export function modeBands(records: StreamRecord[]): ModeBand[] {
  const bands: ModeBand[] = [];
  for (const r of records) {
    if (r.topic !== "ot.telemetry") continue;
    const mode = r.body.mode as string;
    const tMs = r.stamp.real / 1000;
    const last = bands[bands.length - 1];
    if (!last || last.mode !== mode) {
      if (last) last.toMs = tMs;
      bands.push({ fromMs: tMs, toMs: null, mode });
    }
  }
  return bands;
}

const MARKER_KINDS: Record<string, string> = {
  view_change_started: "view change",
  false_suspicion: "false suspicion",
  deadline_violation: "deadline violation",
  decision: "decision",
};

export function auditMarkers(records: StreamRecord[]): Marker[] {
  const out: Marker[] = [];
  for (const r of records) {
    if (r.topic !== "ot.audit") continue;
    const kind = r.body.type as string;
    if (!(kind in MARKER_KINDS)) continue;
    out.push({
      tMs: r.stamp.real / 1000,
      kind,
      label: `${MARKER_KINDS[kind]} (${r.body.replica ?? r.producer})`,
      offset: r.offset,
    });
  }
  return out;
}

export function decisionSeries(records: StreamRecord[]): { tMs: number;
  seq: number; offset: number }[] {
  const seen = new Set<number>();
  const out: { tMs: number; seq: number; offset: number }[] = [];
  for (const r of records) {
    if (r.topic !== "ot.audit" || r.body.type !== "decision") continue;
    if (seen.has(r.body.seq)) continue; // first replica to report wins
    seen.add(r.body.seq);
    out.push({ tMs: r.stamp.real / 1000, seq: r.body.seq, offset: r.offset });
  }
  return out;
}

export function anomalyWindows(anomalies: { window: [number, number];
  type: string }[]): ModeBand[] {
  return anomalies.map((a) => ({
    fromMs: a.window[0] / 1000,
    toMs: a.window[1] / 1000,
    mode: a.type,
  }));
}
