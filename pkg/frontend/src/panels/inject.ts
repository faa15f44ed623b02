// Fault injection panel: draft a spec, submit it into the running
// simulation; validation errors from the harness render inline.

import { Api, ApiError } from "../api.js";
import { FaultSpecDraft } from "../types.js";
import { clear, el } from "./dom.js";

const KINDS = ["delay", "selective_drop", "equivocate", "state_lie", "crash",
               "delay_stretch"];

export class InjectPanel {
  root: HTMLElement;
  private errors: HTMLElement;
  private applied: HTMLElement;
  private kind: HTMLSelectElement;
  private bound: HTMLInputElement;
  private matchKinds: HTMLInputElement;
  private windowFrom: HTMLInputElement;
  private windowTo: HTMLInputElement;
  private delayMs: HTMLInputElement;

  constructor(private api: Api, private runId: string) {
    this.kind = el("select", {});
    for (const k of KINDS) this.kind.append(el("option", { value: k }, k));
    this.bound = el("input", { placeholder: "bound replicas, e.g. r2" });
    this.matchKinds = el("input",
                         { placeholder: "match kinds, e.g. PrePrepare" });
    this.windowFrom = el("input", { value: "0", size: "6" });
    this.windowTo = el("input", { value: "10000", size: "6" });
    this.delayMs = el("input", { value: "5", size: "4" });
    this.errors = el("div", { class: "errors" });
    this.applied = el("ul", { class: "applied" });
    const submit = el("button", {}, "inject");
    submit.onclick = () => void this.submit();
    this.root = el("section", { class: "panel" },
                   el("h2", {}, "fault injection"),
                   el("div", { class: "form" },
                      el("label", {}, "kind ", this.kind),
                      el("label", {}, "bound ", this.bound),
                      el("label", {}, "match ", this.matchKinds),
                      el("label", {}, "window ms ", this.windowFrom,
                         " – ", this.windowTo),
                      el("label", {}, "delay ms ", this.delayMs),
                      submit),
                   this.errors, this.applied);
  }

  draft(): FaultSpecDraft {
    const spec: FaultSpecDraft = {
      kind: this.kind.value,
      window_ms: [Number(this.windowFrom.value), Number(this.windowTo.value)],
    };
    if (this.bound.value.trim()) {
      spec.bound = this.bound.value.split(",").map((s) => s.trim());
    }
    if (this.matchKinds.value.trim()) {
      spec.match = { kinds: this.matchKinds.value.split(",")
                       .map((s) => s.trim()) };
    }
    if (this.kind.value === "delay") {
      spec.params = { delay_ms: Number(this.delayMs.value) };
    }
    return spec;
  }

  async submit(): Promise<void> {
    clear(this.errors);
    try {
      const res = await this.api.injectFault(this.runId, this.draft());
      this.applied.append(
        el("li", {}, `spec ${res.spec_id} active from ${res.at_ms} ms`));
    } catch (err) {
      if (err instanceof ApiError) {
        const details = Array.isArray(err.detail) ? err.detail : [String(err.detail)];
        for (const d of details) {
          this.errors.append(el("div", { class: "error" }, String(d)));
        }
      } else {
        this.errors.append(el("div", { class: "error" }, String(err)));
      }
    }
  }
}
