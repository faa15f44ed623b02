// Console entry point: pick or start a run, then mount the panels on it.

import { Api } from "./api.js";
import { AdvisoryPanel } from "./panels/advisory.js";
import { DashboardPanel } from "./panels/dashboard.js";
import { clear, el } from "./panels/dom.js";
import { InjectPanel } from "./panels/inject.js";
import { WhatIfPanel } from "./panels/whatif.js";
import { sseTransport } from "./stream.js";

const api = new Api("");

const DEMO_SCENARIO = {
  name: "console-demo",
  seed: 7,
  duration_ms: 30000,
  consensus: { timeout_ms: 10 },
  twin: { enabled: true, calibration_ms: 5000 },
  workload: { period_ms: 300, start_ms: 200 },
};

async function mountRun(runId: string, host: HTMLElement): Promise<void> {
  clear(host);
  const dashboard = new DashboardPanel(api, sseTransport("", runId), runId);
  const inject = new InjectPanel(api, runId);
  const whatif = new WhatIfPanel(api, runId);
  const advisory = new AdvisoryPanel(api, runId);
  host.append(dashboard.root, inject.root, whatif.root, advisory.root);
  dashboard.start();
  const poll = setInterval(async () => {
    const status = await api.runStatus(runId);
    document.title = `bftrange - ${runId} (${status.state}, `
      + `${status.now_ms}/${status.duration_ms} ms)`;
    if (status.state !== "running") {
      clearInterval(poll);
      void whatif.refresh();
      void advisory.refresh();
    }
  }, 500);
}

async function boot(): Promise<void> {
  const host = document.getElementById("app");
  if (!host) return;
  const runsBox = el("section", { class: "panel" }, el("h2", {}, "runs"));
  const list = el("ul", {});
  const startBtn = el("button", {}, "start demo run");
  startBtn.onclick = async () => {
    const { run_id } = await api.startRun(DEMO_SCENARIO, { pace: 1.0 });
    await mountRun(run_id, mountPoint);
  };
  runsBox.append(startBtn, list);
  const mountPoint = el("div", {});
  host.append(runsBox, mountPoint);

  const runs = await api.listRuns();
  for (const run of runs) {
    const link = el("button", { class: "link" },
                    `${run.run_id} (${run.state})`);
    link.onclick = () => void mountRun(run.run_id, mountPoint);
    list.append(el("li", {}, link));
  }
}

void boot();
