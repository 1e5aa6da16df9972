import { SseParser } from "./sse.js";
import type {
  AnswerStatus,
  AskRequest,
  AskResponse,
  HealthResponse,
  TraceDict,
} from "./types.js";

async function detail(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: string };
    if (body && typeof body.detail === "string") {
      return body.detail;
    }
  } catch {
    // non-JSON error body; fall through to the status line
  }
  return `${response.status} ${response.statusText}`;
}

/** Typed client over the service's external HTTP interface. */
export class ApiClient {
  constructor(
    readonly base: string = "",
    readonly token: string | null = null,
  ) {}

  private headers(json: boolean): Record<string, string> {
    const out: Record<string, string> = {};
    if (json) {
      out["content-type"] = "application/json";
    }
    if (this.token) {
      out["authorization"] = `Bearer ${this.token}`;
    }
    return out;
  }

  async health(): Promise<HealthResponse> {
    const response = await fetch(`${this.base}/health`);
    if (!response.ok) {
      throw new Error(`health check failed: ${await detail(response)}`);
    }
    return (await response.json()) as HealthResponse;
  }

  async ask(request: AskRequest): Promise<AskResponse> {
    const response = await fetch(`${this.base}/ask`, {
      method: "POST",
      headers: this.headers(true),
      body: JSON.stringify(request),
    });
    if (!response.ok) {
      throw new Error(`ask failed: ${await detail(response)}`);
    }
    return (await response.json()) as AskResponse;
  }

  async trace(traceId: string): Promise<TraceDict> {
    const response = await fetch(
      `${this.base}/trace/${encodeURIComponent(traceId)}`,
      { headers: this.headers(false) },
    );
    if (!response.ok) {
      throw new Error(`trace fetch failed: ${await detail(response)}`);
    }
    return (await response.json()) as TraceDict;
  }

  async ingest(csv: string): Promise<{ ingested: number; store_rows: number }> {
    const response = await fetch(`${this.base}/ingest`, {
      method: "POST",
      headers: { ...this.headers(false), "content-type": "text/csv" },
      body: csv,
    });
    if (!response.ok) {
      throw new Error(`ingest failed: ${await detail(response)}`);
    }
    return (await response.json()) as { ingested: number; store_rows: number };
  }

  /** Replay an answer as a stream; resolves to the final status. */
  async stream(
    traceId: string,
    onText: (chunk: string) => void,
  ): Promise<AnswerStatus> {
    const response = await fetch(
      `${this.base}/ask/stream/${encodeURIComponent(traceId)}`,
      { headers: this.headers(false) },
    );
    if (!response.ok || response.body === null) {
      throw new Error(`stream failed: ${await detail(response)}`);
    }
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    const parser = new SseParser();
    let status: AnswerStatus | null = null;
    for (;;) {
      const { done, value } = await reader.read();
      if (done) {
        break;
      }
      for (const event of parser.push(decoder.decode(value, { stream: true }))) {
        if (event.event === "done") {
          status = (JSON.parse(event.data) as { status: AnswerStatus }).status;
        } else {
          onText((JSON.parse(event.data) as { text: string }).text);
        }
      }
    }
    if (status === null) {
      throw new Error("stream ended without a done event");
    }
    return status;
  }
}
