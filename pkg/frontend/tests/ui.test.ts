/** DOM behavior tests with a scripted client: empty state, error banner with
 * retry, 409 conflict, optimistic feedback rollback, verbatim bucket display,
 * and reviewer-id persistence.
 */

import { beforeEach, describe, expect, it } from "vitest";

import { CaseView, ReviewApi } from "../src/api.js";
import { REVIEWER_STORAGE_KEY, ReviewConsole, agreeingVerdict } from "../src/app.js";

class MapStorage {
  private readonly map = new Map<string, string>();
  getItem(key: string): string | null {
    return this.map.get(key) ?? null;
  }
  setItem(key: string, value: string): void {
    this.map.set(key, value);
  }
}

function fixtureCase(overrides: Partial<CaseView> = {}): CaseView {
  return {
    case_id: "case-1",
    status: "in_review",
    record: { id: "case-1" },
    feature_table: [
      // bucket deliberately contradicts the value: the console must show the
      // service's bucket anyway, proving it never recomputes client-side
      { id: "amount", description: "Transaction amount", value: "5", bucket: "very high" },
      { id: "memo_text", description: "Order memo text", value: "rent", bucket: null },
    ],
    evaluation: {
      fraud_reasons: [
        { signal_id: "amount", polarity: "supports_fraud", text: "very high amount" },
      ],
      legit_reasons: [
        { signal_id: "memo_text", polarity: "supports_legitimacy", text: "routine memo" },
      ],
      verdict: "fraudulent",
      mo: "phishing",
      confidence: 0.42,
    },
    evaluation_text: "EVAL/1 ...",
    parse_error: null,
    reviewer_id: "rev-1",
    verdict: null,
    enqueued_at: 1,
    decided_at: null,
    ...overrides,
  };
}

interface HandlerResult {
  status: number;
  body: unknown;
}
type Handler = (url: string, init?: RequestInit) => Promise<HandlerResult>;

/** Fetch stub driven by a per-call queue of handlers. A handler that throws
 * simulates a network failure; an error status flows through the client's
 * normal non-2xx path. */
function scriptedFetch(handlers: Handler[]) {
  let cursor = 0;
  const calls: Array<{ url: string; init?: RequestInit }> = [];
  const fetchImpl = async (url: string, init?: RequestInit) => {
    calls.push({ url, init });
    const handler = handlers[cursor];
    if (!handler) throw new Error(`no handler for call ${cursor}: ${url}`);
    cursor += 1;
    const { status, body } = await handler(url, init);
    return {
      ok: status >= 200 && status < 300,
      status,
      json: async () => body,
      text: async () => JSON.stringify(body),
    } as unknown as Response;
  };
  return { fetchImpl, calls };
}

function ok(body: unknown): Promise<HandlerResult> {
  return Promise.resolve({ status: 200, body });
}

function makeConsole(handlers: Handler[], reviewer = "rev-1") {
  const { fetchImpl, calls } = scriptedFetch(handlers);
  const storage = new MapStorage();
  storage.setItem(REVIEWER_STORAGE_KEY, reviewer);
  const root = document.createElement("div");
  document.body.innerHTML = "";
  document.body.append(root);
  const app = new ReviewConsole(root, new ReviewApi("", fetchImpl), storage);
  return { app, root, calls, storage };
}

async function flushTasks() {
  for (let i = 0; i < 5; i += 1) {
    await new Promise((resolve) => setTimeout(resolve, 0));
  }
}

describe("agreeingVerdict", () => {
  it("maps assistant verdicts onto reviewer labels", () => {
    expect(agreeingVerdict("fraudulent")).toBe("scam");
    expect(agreeingVerdict("legitimate")).toBe("not_scam");
  });
});

describe("queue states", () => {
  it("shows the empty-state panel when the queue is drained", async () => {
    const { app, root } = makeConsole([() => ok({ case: null })]);
    await app.loadNext();
    expect(root.querySelector("#empty-panel")?.textContent).toContain("No pending cases");
    expect(root.querySelector("#case-panel")).toBeNull();
  });

  it("shows an error banner with a working retry when the service is down", async () => {
    const { app, root } = makeConsole([
      async () => {
        throw new TypeError("fetch failed");
      },
      () => ok({ case: null }),
    ]);
    await app.loadNext();
    const banner = root.querySelector<HTMLElement>("#banner")!;
    expect(banner.hidden).toBe(false);
    expect(banner.textContent).toContain("service unreachable");

    root.querySelector<HTMLButtonElement>("#retry-btn")!.click();
    await flushTasks();
    expect(root.querySelector<HTMLElement>("#banner")!.hidden).toBe(true);
    expect(root.querySelector("#empty-panel")).not.toBeNull();
  });

  it("refuses to fetch without a reviewer id", async () => {
    const { app, root, calls } = makeConsole([], "");
    await app.loadNext();
    expect(calls).toHaveLength(0);
    expect(root.querySelector("#banner")?.textContent).toContain("reviewer id");
  });
});

describe("case rendering", () => {
  it("displays service buckets verbatim, never recomputing them", async () => {
    const { app, root } = makeConsole([() => ok({ case: fixtureCase() })]);
    await app.loadNext();
    const amountRow = root.querySelector('tr[data-feature="amount"]')!;
    const cells = Array.from(amountRow.querySelectorAll("td")).map((td) => td.textContent);
    expect(cells).toEqual(["Transaction amount", "5", "very high"]);
    const memoRow = root.querySelector('tr[data-feature="memo_text"]')!;
    expect(memoRow.querySelectorAll("td")[2].textContent).toBe("");
  });

  it("shows the exact confidence value as a badge", async () => {
    const { app, root } = makeConsole([() => ok({ case: fixtureCase() })]);
    await app.loadNext();
    expect(root.querySelector("#confidence-badge")?.textContent).toBe("0.42");
  });

  it("color-codes reasons by polarity in response order", async () => {
    const { app, root } = makeConsole([() => ok({ case: fixtureCase() })]);
    await app.loadNext();
    expect(root.querySelector("#fraud-reasons li")?.className).toContain("fraud");
    expect(root.querySelector("#legit-reasons li")?.className).toContain("legit");
  });

  it("renders unparsed evaluations with the parse error and raw text", async () => {
    const view = fixtureCase({
      evaluation: null,
      parse_error: "NoVerdictFound: no VERDICT line",
    });
    const { app, root } = makeConsole([() => ok({ case: view })]);
    await app.loadNext();
    expect(root.querySelector("#parse-error")?.textContent).toContain("NoVerdictFound");
    expect(root.querySelector("#evaluation-text")?.textContent).toBe("EVAL/1 ...");
    // the reviewer can still decide it, but no disagreement badge is possible
    expect(root.querySelectorAll("#verdict-controls button")).toHaveLength(2);
    expect(root.querySelector(".disagreement-badge")).toBeNull();
  });
});

describe("verdict submission", () => {
  it("shows a conflict message on 409 and keeps the case on screen", async () => {
    const { app, root } = makeConsole([
      () => ok({ case: fixtureCase() }),
      () =>
        Promise.resolve({
          status: 409,
          body: { code: "NotInReview", message: "case case-1 is decided, not in_review" },
        }),
    ]);
    await app.loadNext();
    await app.submitVerdict("scam");
    const conflict = root.querySelector<HTMLElement>("#conflict")!;
    expect(conflict.hidden).toBe(false);
    expect(conflict.textContent).toContain("NotInReview");
    expect(app.caseOnScreen()?.case_id).toBe("case-1");
  });

  it("marks only the disagreeing button with a badge", async () => {
    const { app, root } = makeConsole([() => ok({ case: fixtureCase() })]);
    await app.loadNext();
    // assistant says fraudulent, so "not_scam" is the disagreeing choice
    expect(root.querySelector('button[data-verdict="not_scam"] .disagreement-badge')).not.toBeNull();
    expect(root.querySelector('button[data-verdict="scam"] .disagreement-badge')).toBeNull();
  });
});

describe("reason feedback", () => {
  it("applies an optimistic mark and rolls it back on failure", async () => {
    let finishCall: (result: HandlerResult) => void = () => {};
    const { app, root } = makeConsole([
      () => ok({ case: fixtureCase() }),
      () =>
        new Promise<HandlerResult>((resolve) => {
          finishCall = resolve;
        }),
    ]);
    await app.loadNext();
    const pending = app.rateReason("supports_fraud", 0, "down", "weak");
    await Promise.resolve(); // let the optimistic mark land
    const ack = root.querySelector('li.reason[data-polarity="supports_fraud"] .ack')!;
    expect(ack.textContent).toContain("recorded"); // optimistic, before the reply
    finishCall({ status: 422, body: { code: "UnknownReason", message: "no such reason" } });
    await pending;
    expect(ack.textContent).toBe(""); // rolled back
    const error = root.querySelector('li.reason[data-polarity="supports_fraud"] .feedback-error')!;
    expect(error.textContent).toContain("UnknownReason");
  });
});

describe("reviewer identity", () => {
  it("persists the reviewer id locally and restores it", async () => {
    const { root, storage } = makeConsole([], "");
    const input = root.querySelector<HTMLInputElement>("#reviewer-input")!;
    input.value = "rev-42";
    input.dispatchEvent(new Event("input"));
    expect(storage.getItem(REVIEWER_STORAGE_KEY)).toBe("rev-42");

    const second = document.createElement("div");
    document.body.append(second);
    new ReviewConsole(second, new ReviewApi("", async () => ({}) as never), storage);
    expect(second.querySelector<HTMLInputElement>("#reviewer-input")!.value).toBe("rev-42");
  });
});
