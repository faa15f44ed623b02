// What-if launcher and vulnerability-map explorer: launch jobs against the
// live twin, render the heatmap with the fixed palette, drill into a cell
// to see its report evidence.

import { Api } from "../api.js";
import { cellsOf, OUTCOME_COLORS } from "../heatmap.js";
import { VulnerabilityMapDoc, WhatIfReportDoc } from "../types.js";
import { badge, clear, el } from "./dom.js";

export class WhatIfPanel {
  root: HTMLElement;
  private output: HTMLElement;
  private drill: HTMLElement;

  constructor(private api: Api, private runId: string) {
    this.output = el("div", {});
    this.drill = el("pre", { class: "drill" });
    const nullBtn = el("button", {}, "null what-if");
    nullBtn.onclick = () => void this.launchNull();
    const sweepBtn = el("button", {}, "timeout × delay sweep");
    sweepBtn.onclick = () => void this.launchSweep();
    const refreshBtn = el("button", {}, "refresh results");
    refreshBtn.onclick = () => void this.refresh();
    this.root = el("section", { class: "panel" },
                   el("h2", {}, "what-if / vulnerability maps"),
                   el("div", {}, nullBtn, " ", sweepBtn, " ", refreshBtn),
                   this.output, this.drill);
  }

  async launchNull(): Promise<void> {
    await this.api.launchJob(this.runId, {
      kind: "what_if", horizon_ms: 800, delta: {}, faults: [],
    });
  }

  async launchSweep(): Promise<void> {
    await this.api.launchJob(this.runId, {
      kind: "sweep", horizon_ms: 800,
      axes: [
        { path: "consensus.timeout_ms", values: [1, 2, 3, 4, 5, 6] },
        { fault_param: "delay_us",
          values: [1000, 2000, 3000, 4000, 5000] },
      ],
      faults_template: [{ kind: "delay", match: { kinds: ["PrePrepare"] },
                          window_ms: [50, 780] }],
    });
  }

  async refresh(): Promise<void> {
    const { results } = await this.api.results(this.runId);
    clear(this.output);
    for (const rec of results) {
      if (rec.body.type === "whatif_report") {
        this.renderReport(rec.body as WhatIfReportDoc & { type: string });
      } else if (rec.body.type === "vulnerability_map") {
        this.renderMap(rec.body as VulnerabilityMapDoc & { type: string });
      }
    }
  }

  private renderReport(doc: WhatIfReportDoc): void {
    this.output.append(
      el("div", { class: "report" },
         badge(doc.outcome, OUTCOME_COLORS[doc.outcome] ?? "#555"),
         ` ${doc.id} - decided ${doc.metrics.requests_decided ?? "?"}`
         + `/${doc.metrics.requests_submitted ?? "?"}, `
         + `view changes ${doc.metrics.view_changes ?? "?"}`));
  }

  renderMap(doc: VulnerabilityMapDoc): HTMLElement {
    const [ax, ay] = doc.axes;
    const table = el("table", { class: "heatmap" });
    const head = el("tr", {}, el("th", {}, `${ay.name} \\ ${ax.name}`));
    for (const v of ax.values) head.append(el("th", {}, String(v)));
    table.append(head);
    const rows: HTMLTableCellElement[][] = [];
    for (let iy = 0; iy < ay.values.length; iy++) {
      const tr = el("tr", {}, el("th", {}, String(ay.values[iy])));
      const rowCells: HTMLTableCellElement[] = [];
      for (let ix = 0; ix < ax.values.length; ix++) {
        const td = el("td", { title: "" });
        tr.append(td);
        rowCells.push(td);
      }
      rows.push(rowCells);
      table.append(tr);
    }
    for (const cell of cellsOf(doc)) {
      const td = rows[cell.iy][cell.ix];
      td.style.background = cell.color;
      td.title = `${cell.outcome} @ ${ax.name}=${cell.x}, ${ay.name}=${cell.y}`;
      td.onclick = () => {
        const full = doc.cells[cell.key];
        clear(this.drill).append(JSON.stringify(
          { cell: cell.key, outcome: cell.outcome,
            metrics: full.metrics, delta: full.delta }, null, 1));
      };
    }
    this.output.append(el("div", {}, el("h3", {}, `map ${doc.id}`), table));
    return table;
  }
}
