/** Review console: claim a case, inspect it, decide it, rate its reasons.
 *
 * The console is a pure API client. Everything it displays comes verbatim
 * from a service response field; buckets, confidence, and reason order are
 * never recomputed here. One active case per tab; the server's leases
 * resolve races between tabs.
 */

import {
  ApiError,
  CaseView,
  ReasonView,
  ReviewApi,
  ServiceUnreachable,
} from "./api.js";

export const REVIEWER_STORAGE_KEY = "scamlens.reviewer";

/** The reviewer verdict that agrees with the assistant's evaluation verdict. */
export function agreeingVerdict(assistantVerdict: string): string {
  return assistantVerdict === "fraudulent" ? "scam" : "not_scam";
}

export interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}

export class ReviewConsole {
  private currentCase: CaseView | null = null;

  private readonly reviewerInput: HTMLInputElement;
  private readonly nextButton: HTMLButtonElement;
  private readonly banner: HTMLElement;
  private readonly bannerMessage: HTMLElement;
  private readonly retryButton: HTMLButtonElement;
  private readonly panel: HTMLElement;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ReviewApi,
    private readonly storage: StorageLike,
  ) {
    root.innerHTML = `
      <header class="console-header">
        <h1>scamlens review</h1>
        <label>reviewer
          <input id="reviewer-input" type="text" placeholder="your reviewer id" />
        </label>
        <button id="next-btn" type="button">Next case</button>
      </header>
      <div id="banner" class="banner" hidden>
        <span id="banner-message"></span>
        <button id="retry-btn" type="button">Retry</button>
      </div>
      <main id="panel"></main>
    `;
    this.reviewerInput = root.querySelector("#reviewer-input")!;
    this.nextButton = root.querySelector("#next-btn")!;
    this.banner = root.querySelector("#banner")!;
    this.bannerMessage = root.querySelector("#banner-message")!;
    this.retryButton = root.querySelector("#retry-btn")!;
    this.panel = root.querySelector("#panel")!;

    this.reviewerInput.value = this.storage.getItem(REVIEWER_STORAGE_KEY) ?? "";
    this.reviewerInput.addEventListener("input", () => {
      this.storage.setItem(REVIEWER_STORAGE_KEY, this.reviewerInput.value);
    });
    this.nextButton.addEventListener("click", () => void this.loadNext());
    this.retryButton.addEventListener("click", () => void this.loadNext());
  }

  get reviewerId(): string {
    return this.reviewerInput.value.trim();
  }

  caseOnScreen(): CaseView | null {
    return this.currentCase;
  }

  async loadNext(): Promise<void> {
    this.hideBanner();
    if (!this.reviewerId) {
      this.showBanner("Enter a reviewer id first.");
      return;
    }
    try {
      const next = await this.api.nextCase(this.reviewerId);
      this.currentCase = next;
      if (next === null) {
        this.renderEmpty();
      } else {
        this.renderCase(next);
      }
    } catch (err) {
      this.currentCase = null;
      this.showBanner(describeError(err));
    }
  }

  async submitVerdict(verdict: string): Promise<void> {
    const current = this.currentCase;
    if (current === null) return;
    const payload: { reviewer_id: string; verdict: string; disagreement?: boolean } = {
      reviewer_id: this.reviewerId,
      verdict,
    };
    const evaluation = current.evaluation;
    const disagrees =
      evaluation !== null && verdict !== agreeingVerdict(evaluation.verdict);
    if (disagrees) payload.disagreement = true;
    try {
      await this.api.submitVerdict(current.case_id, payload);
      await this.loadNext();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.showConflict(err);
      } else {
        this.showBanner(describeError(err));
      }
    }
  }

  async rateReason(
    polarity: string,
    reasonIndex: number,
    rating: "up" | "down",
    note: string,
  ): Promise<void> {
    const current = this.currentCase;
    if (current === null) return;
    const row = this.reasonRow(polarity, reasonIndex);
    const ack = row?.querySelector<HTMLElement>(".ack") ?? null;
    const errorSlot = row?.querySelector<HTMLElement>(".feedback-error") ?? null;
    const previousAck = ack?.textContent ?? "";
    if (ack) ack.textContent = rating === "up" ? "▲ recorded" : "▼ recorded";
    if (errorSlot) errorSlot.textContent = "";
    const payload: { polarity: string; reason_index: number; rating: string; note?: string } = {
      polarity,
      reason_index: reasonIndex,
      rating,
    };
    if (note.trim()) payload.note = note.trim();
    try {
      await this.api.submitFeedback(current.case_id, payload);
    } catch (err) {
      if (ack) ack.textContent = previousAck; // roll the optimistic mark back
      if (errorSlot) errorSlot.textContent = describeError(err);
    }
  }

  // --- rendering ---

  private renderEmpty(): void {
    this.panel.innerHTML = `<section id="empty-panel" class="empty">
      <p>No pending cases. The queue is drained.</p>
    </section>`;
  }

  private renderCase(view: CaseView): void {
    this.panel.innerHTML = "";
    const section = document.createElement("section");
    section.id = "case-panel";

    const head = document.createElement("div");
    head.className = "case-head";
    const title = document.createElement("h2");
    title.textContent = `Case ${view.case_id}`;
    const status = document.createElement("span");
    status.id = "case-status";
    status.textContent = view.status;
    head.append(title, status);

    if (view.evaluation) {
      const verdictLine = document.createElement("p");
      verdictLine.id = "assistant-verdict";
      verdictLine.textContent = `assistant: ${view.evaluation.verdict}, MO ${view.evaluation.mo}`;
      const badge = document.createElement("span");
      badge.id = "confidence-badge";
      badge.className = "badge";
      badge.textContent = String(view.evaluation.confidence);
      verdictLine.append(" ", badge);
      head.append(verdictLine);
    } else {
      const unparsed = document.createElement("p");
      unparsed.id = "parse-error";
      unparsed.textContent = `evaluation did not parse: ${view.parse_error ?? "unknown error"}`;
      head.append(unparsed);
    }
    section.append(head);

    section.append(this.featureTable(view));

    if (view.evaluation) {
      section.append(
        this.reasonList("fraud", "supports_fraud", view.evaluation.fraud_reasons),
        this.reasonList("legit", "supports_legitimacy", view.evaluation.legit_reasons),
      );
    } else {
      const raw = document.createElement("pre");
      raw.id = "evaluation-text";
      raw.textContent = view.evaluation_text;
      section.append(raw);
    }

    section.append(this.verdictControls(view));
    const conflict = document.createElement("p");
    conflict.id = "conflict";
    conflict.className = "conflict";
    conflict.hidden = true;
    section.append(conflict);

    this.panel.append(section);
  }

  private featureTable(view: CaseView): HTMLTableElement {
    const table = document.createElement("table");
    table.id = "feature-table";
    const header = document.createElement("tr");
    for (const text of ["feature", "value", "bucket"]) {
      const th = document.createElement("th");
      th.textContent = text;
      header.append(th);
    }
    table.append(header);
    for (const row of view.feature_table) {
      const tr = document.createElement("tr");
      tr.dataset.feature = row.id;
      for (const text of [row.description, row.value, row.bucket ?? ""]) {
        const td = document.createElement("td");
        td.textContent = text;
        tr.append(td);
      }
      table.append(tr);
    }
    return table;
  }

  private reasonList(kind: "fraud" | "legit", polarity: string, reasons: ReasonView[]): HTMLElement {
    const wrapper = document.createElement("div");
    wrapper.id = `${kind}-reasons`;
    const heading = document.createElement("h3");
    heading.textContent = kind === "fraud" ? "Reasons supporting fraud" : "Reasons supporting legitimacy";
    wrapper.append(heading);
    const list = document.createElement("ol");
    reasons.forEach((reason, index) => {
      const li = document.createElement("li");
      li.className = `reason ${kind}`;
      li.dataset.polarity = polarity;
      li.dataset.index = String(index);
      const text = document.createElement("span");
      text.className = "reason-text";
      text.textContent = `[${reason.signal_id ?? "?"}] ${reason.text}`;
      const up = document.createElement("button");
      up.type = "button";
      up.className = "rate-up";
      up.textContent = "▲";
      const down = document.createElement("button");
      down.type = "button";
      down.className = "rate-down";
      down.textContent = "▼";
      const note = document.createElement("input");
      note.type = "text";
      note.className = "note";
      note.placeholder = "note (optional)";
      const ack = document.createElement("span");
      ack.className = "ack";
      const errorSlot = document.createElement("span");
      errorSlot.className = "feedback-error";
      up.addEventListener("click", () => void this.rateReason(polarity, index, "up", note.value));
      down.addEventListener("click", () => void this.rateReason(polarity, index, "down", note.value));
      li.append(text, up, down, note, ack, errorSlot);
      list.append(li);
    });
    wrapper.append(list);
    return wrapper;
  }

  private verdictControls(view: CaseView): HTMLElement {
    const controls = document.createElement("div");
    controls.id = "verdict-controls";
    for (const verdict of ["scam", "not_scam"]) {
      const button = document.createElement("button");
      button.type = "button";
      button.dataset.verdict = verdict;
      button.textContent = verdict === "scam" ? "Scam" : "Not scam";
      const evaluation = view.evaluation;
      if (evaluation !== null && verdict !== agreeingVerdict(evaluation.verdict)) {
        const badge = document.createElement("span");
        badge.className = "disagreement-badge";
        badge.textContent = "disagrees with assistant";
        button.append(" ", badge);
      }
      button.addEventListener("click", () => void this.submitVerdict(verdict));
      controls.append(button);
    }
    return controls;
  }

  private reasonRow(polarity: string, index: number): HTMLElement | null {
    return this.panel.querySelector(
      `li.reason[data-polarity="${polarity}"][data-index="${index}"]`,
    );
  }

  private showConflict(err: ApiError): void {
    const slot = this.panel.querySelector<HTMLElement>("#conflict");
    if (slot) {
      slot.hidden = false;
      slot.textContent =
        `Conflict (${err.code}): ${err.message} ` +
        "Another reviewer or tab holds this case; fetch the next one.";
    }
  }

  private showBanner(message: string): void {
    this.banner.hidden = false;
    this.bannerMessage.textContent = message;
  }

  private hideBanner(): void {
    this.banner.hidden = true;
    this.bannerMessage.textContent = "";
  }
}

export function describeError(err: unknown): string {
  if (err instanceof ApiError) return `${err.code}: ${err.message}`;
  if (err instanceof ServiceUnreachable) return err.message;
  return String(err);
}
