// Wire types mirrored from the harness API. The console derives nothing
// authoritative on its own: every number shown traces back to a record
// offset or a report field.

export interface Stamp {
  real: number;
  logical: number;
  twin: string;
}

export interface StreamRecord {
  topic: string;
  offset: number;
  stamp: Stamp;
  producer: string;
  body: any;
  late?: boolean;
  transport_delay?: number;
}

export interface RunStatus {
  run_id: string;
  state: "running" | "finished" | "stopped" | "failed";
  scenario_name: string;
  seed: number;
  now_ms: number;
  duration_ms: number;
  audit_counts: Record<string, number>;
  error: string | null;
}

export interface MapAxis {
  name: string;
  values: number[];
}

export interface VulnerabilityMapDoc {
  id: string;
  axes: MapAxis[];
  cells: Record<string, { outcome: string; metrics?: any; delta?: any }>;
  boundary: [string, string][];
}

export interface WhatIfReportDoc {
  id: string;
  outcome: string;
  metrics: Record<string, any>;
  delta: Record<string, any>;
  faults: any[];
  horizon_us: number;
}

export interface AdvisoryDoc {
  advisory_id: string;
  claim: Record<string, any>;
  recommendation: { kind: string; changes?: Record<string, number>;
                    remove?: string; add?: string };
  evidence: string[];
}

export interface ManagerDecisionDoc {
  advisory_id: string;
  verdict: "Apply" | "Reject" | "Defer";
  rationale: string;
  applied_delta: Record<string, number> | null;
  operator: string;
}

export interface FaultSpecDraft {
  id?: string;
  kind: string;
  bound?: string[];
  match?: { kinds?: string[]; srcs?: string[]; dsts?: string[] };
  window_ms?: [number, number];
  params?: Record<string, any>;
}
