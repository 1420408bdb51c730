/** Typed client for the review service /v1 REST API.
 *
 * Pure transport: every method returns exactly what the service sent, and
 * errors reproduce the service's {code, message} body. No field is computed
 * client-side.
 */

export interface FeatureRow {
  id: string;
  description: string;
  value: string;
  bucket: string | null;
}

export interface ReasonView {
  signal_id: string | null;
  polarity: string | null;
  text: string;
}

export interface EvaluationView {
  fraud_reasons: ReasonView[];
  legit_reasons: ReasonView[];
  verdict: string;
  mo: string;
  confidence: number;
}

export interface FeedbackView {
  polarity: string;
  reason_index: number;
  rating: string;
  note: string | null;
}

export interface CaseView {
  case_id: string;
  status: string;
  record: Record<string, unknown>;
  feature_table: FeatureRow[];
  evaluation: EvaluationView | null;
  evaluation_text: string;
  parse_error: string | null;
  reviewer_id: string | null;
  verdict: string | null;
  enqueued_at: number;
  decided_at: number | null;
  feedback?: FeedbackView[];
}

export interface EnqueueResult {
  record_id: string;
  status: string;
  case_id: string | null;
  error_code?: string;
  error_message?: string;
}

export interface VerdictPayload {
  reviewer_id: string;
  verdict: string;
  /** Set when the reviewer's verdict contradicts the assistant's. */
  disagreement?: boolean;
}

export interface FeedbackPayload {
  polarity: string;
  reason_index: number;
  rating: string;
  note?: string;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/** Network-level failure (service unreachable), distinct from an API error. */
export class ServiceUnreachable extends Error {
  constructor(cause: unknown) {
    super(`service unreachable: ${String(cause)}`);
    this.name = "ServiceUnreachable";
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

async function errorFrom(response: Response): Promise<ApiError> {
  let code = "HttpError";
  let message = `HTTP ${response.status}`;
  try {
    const body = await response.json();
    if (body && typeof body.code === "string") code = body.code;
    if (body && typeof body.message === "string") message = body.message;
  } catch {
    // non-JSON error body; keep the status-line message
  }
  return new ApiError(response.status, code, message);
}

export class ReviewApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request(method: string, path: string, body?: unknown): Promise<Response> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, {
        method,
        headers: body === undefined ? undefined : { "Content-Type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (cause) {
      throw new ServiceUnreachable(cause);
    }
    if (!response.ok) throw await errorFrom(response);
    return response;
  }

  async enqueue(records: unknown[]): Promise<EnqueueResult[]> {
    const response = await this.request("POST", "/v1/transactions", { records });
    const body = await response.json();
    return body.results;
  }

  /** Claim the oldest pending case; null means the queue is drained. */
  async nextCase(reviewerId: string): Promise<CaseView | null> {
    const response = await this.request(
      "GET",
      `/v1/review/next?reviewer=${encodeURIComponent(reviewerId)}`,
    );
    const body = await response.json();
    return body.case;
  }

  async submitVerdict(caseId: string, payload: VerdictPayload): Promise<CaseView> {
    const response = await this.request(
      "POST",
      `/v1/review/${encodeURIComponent(caseId)}/verdict`,
      payload,
    );
    const body = await response.json();
    return body.case;
  }

  async submitFeedback(caseId: string, payload: FeedbackPayload): Promise<CaseView> {
    const response = await this.request(
      "POST",
      `/v1/review/${encodeURIComponent(caseId)}/feedback`,
      payload,
    );
    const body = await response.json();
    return body.case;
  }

  async getCase(caseId: string): Promise<CaseView> {
    const response = await this.request("GET", `/v1/cases/${encodeURIComponent(caseId)}`);
    const body = await response.json();
    return body.case;
  }

  async metricsReport(): Promise<Record<string, unknown>> {
    const response = await this.request("GET", "/v1/metrics/report");
    return response.json();
  }

  /** Decisions + annotations JSONL, verbatim. */
  async exportDecisions(): Promise<string> {
    const response = await this.request("GET", "/v1/export/decisions");
    return response.text();
  }
}
