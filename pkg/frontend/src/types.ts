/** Wire shapes of the hvacqa HTTP service, as consumed by the console. */

export type AnswerStatus = "ok" | "partial" | "refused" | "failed";

export interface AskRequest {
  query: string;
  persona: string;
  ablation?: string | null;
}

export interface AskResponse {
  answer: string;
  status: AnswerStatus;
  trace_id: string;
}

export interface StageRecord {
  name: string;
  ok: boolean;
  detail: string;
  retries: number;
  latency_ms: number;
}

export interface CompletionRecord {
  text: string;
  input_tokens: number;
  output_tokens: number;
  latency_ms: number;
  model: string;
  estimated: boolean;
}

export interface SqlRecord {
  text: string;
  params: Array<string | number>;
}

export interface InstructionRecord {
  target: string;
  kind: string;
  ok?: boolean;
  latency_ms?: number;
  sql?: SqlRecord[];
  rows?: number;
  op?: string;
}

export interface PlanRecord {
  thinking: string;
  expectation: {
    template: string;
    auxiliary: string[];
    format_hints: string;
  };
  instructions: unknown[];
  refusal: string | null;
}

export interface TraceDict {
  request_id: string;
  query: string;
  persona: string;
  config: string;
  started_at: string;
  stages: StageRecord[];
  plan: PlanRecord | null;
  planner: CompletionRecord | null;
  responder: CompletionRecord | null;
  total_token_length: number;
  tokens_estimated: boolean;
  retrieved_cells: Array<[string, string, string]>;
  env_summary: Array<{ name: string; kind: string; preview: string }>;
  instructions: InstructionRecord[];
  alignment: { unbound: string[]; unused: string[] } | null;
  residuals: string[];
  failure: string | null;
  status: AnswerStatus;
  answer_text: string;
  end_to_end_ms: number;
}

export interface HealthResponse {
  ok: boolean;
  store_rows: number;
  backends: { planner: string; responder: string; judges: string[] };
  personas: string[];
}
