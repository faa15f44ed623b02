// Advisory panel: pending read-only intents from the twin; approve or
// reject sends the confirmation through the manager's endpoint. Buttons
// disable on first click; a repeated decision surfaces AlreadyDecided.

import { Api, ApiError } from "../api.js";
import { AdvisoryDoc, ManagerDecisionDoc } from "../types.js";
import { clear, el } from "./dom.js";

export class AdvisoryPanel {
  root: HTMLElement;
  private list: HTMLElement;
  private log: HTMLElement;

  constructor(private api: Api, private runId: string) {
    this.list = el("div", {});
    this.log = el("ul", { class: "decision-log" });
    const refresh = el("button", {}, "refresh");
    refresh.onclick = () => void this.refresh();
    this.root = el("section", { class: "panel" },
                   el("h2", {}, "advisories"), refresh, this.list,
                   el("h3", {}, "manager decisions"), this.log);
  }

  async refresh(): Promise<void> {
    const { advisories, decisions, pending } =
      await this.api.advisories(this.runId);
    clear(this.list);
    clear(this.log);
    const decided = new Map(decisions.map((d) => [d.advisory_id, d]));
    for (const rec of advisories) {
      const adv = rec.body as AdvisoryDoc;
      const isPending = pending.includes(adv.advisory_id);
      this.list.append(this.renderAdvisory(adv, isPending,
                                           decided.get(adv.advisory_id)));
    }
    for (const d of decisions) {
      this.log.append(el(
        "li", {},
        `${d.advisory_id}: ${d.verdict} (${d.operator}) - ${d.rationale}`));
    }
  }

  private renderAdvisory(adv: AdvisoryDoc, isPending: boolean,
                         decision?: ManagerDecisionDoc): HTMLElement {
    const box = el("div", { class: "advisory" },
                   el("b", {}, adv.advisory_id),
                   el("div", {}, `claim: ${JSON.stringify(adv.claim)}`),
                   el("div", {},
                      `recommendation: ${JSON.stringify(adv.recommendation)}`),
                   el("div", {}, `evidence: ${adv.evidence.join(", ")}`));
    if (isPending) {
      const approve = el("button", {}, "approve");
      const reject = el("button", {}, "reject");
      const status = el("span", { class: "status" });
      const decide = async (ok: boolean) => {
        approve.disabled = reject.disabled = true; // idempotent UI
        try {
          await this.api.decideAdvisory(this.runId, adv.advisory_id, ok);
          status.textContent = ok ? "approved" : "rejected";
        } catch (err) {
          status.textContent = err instanceof ApiError && err.status === 409
            ? "already decided" : String(err);
        }
      };
      approve.onclick = () => void decide(true);
      reject.onclick = () => void decide(false);
      box.append(approve, " ", reject, " ", status);
    } else if (decision) {
      box.append(el("div", { class: "status" },
                    `decided: ${decision.verdict}`));
    }
    return box;
  }
}
