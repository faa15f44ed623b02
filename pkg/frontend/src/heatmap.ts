// Vulnerability-map render model: fixed outcome palette (screenshots stay
// comparable across runs), cell grid extraction and frontier math.

import { MapAxis, VulnerabilityMapDoc } from "./types.js";

// Fixed palette, one color per outcome class; mirrors the report renderer.
export const OUTCOME_COLORS: Record<string, string> = {
  SafeLive: "#2e7d32",
  FailSafeEngaged: "#7b1fa2",
  FalseSuspicionStorm: "#ef6c00",
  LivenessViolation: "#c62828",
  SafetyViolation: "#4e0d0d",
};

export const VIOLATING = new Set([
  "SafetyViolation", "LivenessViolation", "FalseSuspicionStorm",
  "FailSafeEngaged",
]);

export interface HeatCell {
  key: string;
  ix: number;          // column index (first axis)
  iy: number;          // row index (second axis)
  x: number;           // first-axis value
  y: number;           // second-axis value
  outcome: string;
  color: string;
  violating: boolean;
}

export function cellsOf(doc: VulnerabilityMapDoc): HeatCell[] {
  const [ax, ay] = doc.axes;
  const out: HeatCell[] = [];
  for (const [key, cell] of Object.entries(doc.cells)) {
    const [ix, iy] = key.split(",").map(Number);
    out.push({
      key, ix, iy,
      x: ax.values[ix],
      y: ay ? ay.values[iy] : 0,
      outcome: cell.outcome,
      color: OUTCOME_COLORS[cell.outcome] ?? "#555",
      violating: VIOLATING.has(cell.outcome),
    });
  }
  out.sort((a, b) => a.iy - b.iy || a.ix - b.ix);
  return out;
}

// For each row (second axis), the smallest first-axis value whose cell is
// safe; null when the whole row violates.
export function frontierByRow(doc: VulnerabilityMapDoc): (number | null)[] {
  const [ax, ay] = doc.axes;
  const rows = ay ? ay.values.length : 1;
  const frontier: (number | null)[] = [];
  for (let iy = 0; iy < rows; iy++) {
    let found: number | null = null;
    for (let ix = 0; ix < ax.values.length; ix++) {
      const cell = doc.cells[`${ix},${iy}`];
      if (cell && !VIOLATING.has(cell.outcome)) {
        found = ax.values[ix];
        break;
      }
    }
    frontier.push(found);
  }
  return frontier;
}

// True when the map's safe/violating split matches a reference rule to
// within one grid cell: a disagreeing cell is tolerated only if the rule
// itself flips within one step of it (i.e. the cell sits on the frontier).
export function frontierMatches(doc: VulnerabilityMapDoc,
                                rule: (x: number, y: number) => boolean,
                                stepX: number, stepY: number): boolean {
  for (const cell of cellsOf(doc)) {
    const expected = rule(cell.x, cell.y);
    if (cell.violating === expected) continue;
    const nearBoundary =
      rule(cell.x + stepX, cell.y) !== expected ||
      rule(cell.x - stepX, cell.y) !== expected ||
      (stepY > 0 && (rule(cell.x, cell.y + stepY) !== expected ||
                     rule(cell.x, cell.y - stepY) !== expected));
    if (!nearBoundary) return false;
  }
  return true;
}
