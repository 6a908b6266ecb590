/** Thin typed client for the triageflow service.
 *
 * The transport is abstracted behind HttpClient so tests can substitute a
 * recorded mock; the browser entry point wraps window.fetch. Every method
 * maps 1:1 onto a documented endpoint, and nothing is computed client-side.
 */

import type {
  ChartSummary,
  DemographicsInput,
  SessionEnvelope,
  SessionView,
} from "./types.js";

export interface HttpRequestInit {
  method?: string;
  headers?: Record<string, string>;
  body?: string;
}

export interface HttpResponse {
  status: number;
  json(): Promise<unknown>;
  text(): Promise<string>;
}

export type HttpClient = (path: string, init?: HttpRequestInit) => Promise<HttpResponse>;

/** A response the service produced on purpose (4xx/5xx with a detail).
 * Transport failures reject with whatever the HttpClient threw instead. */
export class ApiError extends Error {
  readonly status: number;
  readonly detail: string;

  constructor(status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
    this.status = status;
    this.detail = detail;
  }
}

async function errorDetail(response: HttpResponse): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (body && typeof body.detail === "string") return body.detail;
  } catch {
    // non-JSON error body; fall through to the generic detail
  }
  return "request failed";
}

export class TriageApi {
  private readonly http: HttpClient;

  constructor(http: HttpClient) {
    this.http = http;
  }

  private async requestJson(path: string, init?: HttpRequestInit): Promise<unknown> {
    const response = await this.http(path, init);
    if (response.status >= 400) {
      throw new ApiError(response.status, await errorDetail(response));
    }
    return response.json();
  }

  private post(path: string, body: unknown): Promise<unknown> {
    return this.requestJson(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  async createSession(demographics: DemographicsInput | null): Promise<SessionEnvelope> {
    const body = demographics === null ? {} : { ...demographics };
    return (await this.post("/sessions", body)) as SessionEnvelope;
  }

  async getSession(sessionId: string): Promise<SessionView> {
    const payload = (await this.requestJson(`/sessions/${sessionId}`)) as {
      session: SessionView;
    };
    return payload.session;
  }

  async sendMessage(sessionId: string, text: string): Promise<SessionEnvelope> {
    return (await this.post(`/sessions/${sessionId}/messages`, { text })) as SessionEnvelope;
  }

  async switchChart(sessionId: string, flowchartId: string): Promise<SessionEnvelope> {
    return (await this.post(`/sessions/${sessionId}/chart`, {
      flowchart_id: flowchartId,
    })) as SessionEnvelope;
  }

  /** Raw ndjson; parsing stays in the trail module so a bad line cannot
   * take the transport down with it. */
  async fetchTrail(sessionId: string): Promise<string> {
    const response = await this.http(`/sessions/${sessionId}/trail`);
    if (response.status >= 400) {
      throw new ApiError(response.status, await errorDetail(response));
    }
    return response.text();
  }

  async listFlowcharts(): Promise<ChartSummary[]> {
    const payload = (await this.requestJson("/flowcharts")) as {
      flowcharts: ChartSummary[];
    };
    return payload.flowcharts;
  }
}
