/** Typed client for the priha HTTP service. */

export interface Reference {
  n: number;
  title: string;
  locator: string;
  kind: string;
  date: string;
}

export interface ServerReply {
  kind: "clarifying_question" | "final_answer" | "error";
  text: string;
  references?: Reference[];
  options?: string[];
  trace_id?: string;
}

export interface ChannelFragment {
  error: string | null;
  keyword_hits?: number;
  semantic_hits?: number;
  pool?: number;
  ranker?: string | null;
  rounds?: unknown[];
  evidence?: { final_url: string; title: string; authority_tier: number }[];
}

export interface AssembledRow {
  eid: number;
  origin: string;
  authority_tier: number;
  date: string;
  locator: string;
  title: string;
  chars: number;
}

export interface Trace {
  trace_id: string;
  mode: string;
  intent: { intent_text: string; sub_queries: { text: string; purpose: string }[] };
  channels: {
    local: Record<string, ChannelFragment>;
    web: Record<string, ChannelFragment>;
  };
  reconciler: { assembled: AssembledRow[] };
  counters: Record<string, number>;
}

export interface Api {
  createSession(): Promise<string>;
  postMessage(sessionId: string, text: string): Promise<ServerReply>;
  getTrace(traceId: string): Promise<Trace | null>;
}

export class ApiError extends Error {
  constructor(message: string, readonly status: number | null = null) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchFn = typeof globalThis.fetch;

export class HttpApi implements Api {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchFn = (...args) => globalThis.fetch(...args),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    let response: Response;
    try {
      response = await this.fetchFn(this.base + path, init);
    } catch (exc) {
      throw new ApiError(`network failure: ${String(exc)}`);
    }
    if (!response.ok) {
      throw new ApiError(`server replied ${response.status}`, response.status);
    }
    return response.json();
  }

  async createSession(): Promise<string> {
    const body = (await this.request("/v1/sessions", { method: "POST" })) as {
      session_id: string;
    };
    return body.session_id;
  }

  async postMessage(sessionId: string, text: string): Promise<ServerReply> {
    return (await this.request(`/v1/sessions/${sessionId}/messages`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ text }),
    })) as ServerReply;
  }

  async getTrace(traceId: string): Promise<Trace | null> {
    try {
      return (await this.request(`/v1/traces/${traceId}`)) as Trace;
    } catch (exc) {
      // A missing trace is an empty state, not a failure.
      if (exc instanceof ApiError && exc.status === 404) return null;
      throw exc;
    }
  }
}
