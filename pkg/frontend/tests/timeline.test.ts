import { describe, expect, it } from "vitest";

import { auditMarkers, decisionSeries, levelSeries, modeBands }
  from "../src/timeline.js";
import { StreamRecord } from "../src/types.js";

function telemetry(offset: number, realUs: number, level: number,
                   mode: string): StreamRecord {
  return { topic: "ot.telemetry", offset,
           stamp: { real: realUs, logical: offset + 1, twin: "0" },
           producer: "plc",
           body: { level, valve: 0.2, mode, setpoint: 5 } };
}

function audit(offset: number, realUs: number, body: any): StreamRecord {
  return { topic: "ot.audit", offset,
           stamp: { real: realUs, logical: offset + 1, twin: "0" },
           producer: body.replica ?? "r0", body };
}

describe("level series", () => {
  it("converts stamps to milliseconds and keeps offsets", () => {
    const pts = levelSeries([telemetry(0, 100_000, 5.0, "Normal"),
                             telemetry(1, 200_000, 5.1, "Normal")]);
    expect(pts).toHaveLength(2);
    expect(pts[0]).toMatchObject({ tMs: 100, level: 5.0, offset: 0 });
  });
});

describe("mode bands", () => {
  it("opens a band per transition and closes the previous one", () => {
    const bands = modeBands([
      telemetry(0, 100_000, 5, "Normal"),
      telemetry(1, 200_000, 5, "Normal"),
      telemetry(2, 300_000, 5, "FailSafe"),
      telemetry(3, 400_000, 5, "FailSafe"),
      telemetry(4, 500_000, 5, "Normal"),
    ]);
    expect(bands).toEqual([
      { fromMs: 100, toMs: 300, mode: "Normal" },
      { fromMs: 300, toMs: 500, mode: "FailSafe" },
      { fromMs: 500, toMs: null, mode: "Normal" },
    ]);
  });
});

describe("audit markers", () => {
  it("extracts classified markers traceable to offsets", () => {
    const markers = auditMarkers([
      audit(0, 50_000, { type: "view_change_started", replica: "r1" }),
      audit(1, 60_000, { type: "false_suspicion", replica: "r1" }),
      audit(2, 70_000, { type: "request", request_id: ["m", 1] }),
    ]);
    expect(markers.map((m) => m.kind)).toEqual(
      ["view_change_started", "false_suspicion"]);
    expect(markers[1].offset).toBe(1);
  });
});

describe("decision series", () => {
  it("dedupes per sequence across replica reports", () => {
    const records = [
      audit(0, 10_000, { type: "decision", seq: 1, replica: "r0" }),
      audit(1, 11_000, { type: "decision", seq: 1, replica: "r1" }),
      audit(2, 12_000, { type: "decision", seq: 2, replica: "r0" }),
    ];
    const decs = decisionSeries(records);
    expect(decs.map((d) => d.seq)).toEqual([1, 2]);
  });
});
