// Thin REST client over the harness API; the only write path the console has.

import { AdvisoryDoc, FaultSpecDraft, ManagerDecisionDoc, RunStatus,
         StreamRecord } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, public detail: any) {
    super(typeof detail === "string" ? detail : JSON.stringify(detail));
  }
}

export class Api {
  constructor(private base: string = "") {}

  private async call<T>(method: string, path: string, body?: any): Promise<T> {
    const res = await fetch(this.base + path, {
      method,
      headers: body !== undefined ? { "content-type": "application/json" } : {},
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    const text = await res.text();
    const data = text ? JSON.parse(text) : null;
    if (!res.ok) {
      throw new ApiError(res.status, data?.detail ?? data);
    }
    return data as T;
  }

  validate(scenario: any) {
    return this.call<{ ok: boolean; errors: string[] }>(
      "POST", "/api/validate", scenario);
  }

  startRun(scenario: any, opts: { seed?: number; pace?: number;
           auto_confirm?: boolean } = {}) {
    return this.call<{ run_id: string }>("POST", "/api/runs",
                                         { scenario, ...opts });
  }

  listRuns() {
    return this.call<RunStatus[]>("GET", "/api/runs");
  }

  runStatus(runId: string) {
    return this.call<RunStatus>("GET", `/api/runs/${runId}`);
  }

  stopRun(runId: string) {
    return this.call("POST", `/api/runs/${runId}/stop`);
  }

  report(runId: string) {
    return this.call<any>("GET", `/api/runs/${runId}/report`);
  }

  records(runId: string, topic: string, start = 0, end?: number) {
    const tail = end !== undefined ? `&end=${end}` : "";
    return this.call<{ topic: string; head: number; records: StreamRecord[] }>(
      "GET", `/api/runs/${runId}/topics/${topic}/records?start=${start}${tail}`);
  }

  injectFault(runId: string, spec: FaultSpecDraft, exceeds = false) {
    return this.call<{ spec_id: string; at_ms: number }>(
      "POST", `/api/runs/${runId}/faults`,
      { spec, exceeds_fault_bound: exceeds });
  }

  launchJob(runId: string, job: any, atMs?: number) {
    return this.call<{ at_ms: number }>(
      "POST", `/api/runs/${runId}/jobs`, { job, at_ms: atMs ?? null });
  }

  results(runId: string) {
    return this.call<{ results: StreamRecord[] }>(
      "GET", `/api/runs/${runId}/results`);
  }

  advisories(runId: string) {
    return this.call<{ advisories: StreamRecord[];
                       decisions: ManagerDecisionDoc[];
                       pending: string[] }>(
      "GET", `/api/runs/${runId}/advisories`);
  }

  decideAdvisory(runId: string, advisoryId: string, approve: boolean) {
    return this.call<{ advisory_id: string; at_ms: number }>(
      "POST", `/api/runs/${runId}/advisories/${advisoryId}/decision`,
      { approve });
  }
}
