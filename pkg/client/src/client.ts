import { NotSubmitted, RemoteError, SessionClosed, TransportError } from './errors.js';
import type {
  ActionInput,
  CreateSessionInit,
  EvaluateResult,
  SessionStatus,
  StepFeedback,
  StepResult,
} from './types.js';

export interface ClientOptions {
  baseUrl: string;
  /** Per-request timeout in milliseconds. */
  timeoutMs?: number;
  /** Retries on network failures and 5xx responses. */
  maxRetries?: number;
  /** Injectable for tests; defaults to the global fetch. */
  fetchFn?: typeof fetch;
}

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

async function request<T>(
  options: Required<Pick<ClientOptions, 'baseUrl' | 'timeoutMs' | 'maxRetries'>> & {
    fetchFn: typeof fetch;
  },
  method: 'GET' | 'POST',
  path: string,
  body?: unknown,
): Promise<T> {
  const url = options.baseUrl.replace(/\/$/, '') + path;
  let lastFailure: unknown;
  for (let attempt = 0; attempt <= options.maxRetries; attempt++) {
    const controller = new AbortController();
    const timer = setTimeout(() => controller.abort(), options.timeoutMs);
    let response: Response;
    try {
      response = await options.fetchFn(url, {
        method,
        headers: body === undefined ? undefined : { 'Content-Type': 'application/json' },
        body: body === undefined ? undefined : JSON.stringify(body),
        signal: controller.signal,
      });
    } catch (cause) {
      lastFailure = cause;
      if (attempt < options.maxRetries) {
        await sleep(50 * 2 ** attempt);
        continue;
      }
      throw new TransportError(`request to ${url} failed: ${String(cause)}`, cause);
    } finally {
      clearTimeout(timer);
    }

    if (response.status >= 500) {
      lastFailure = new Error(`HTTP ${response.status}`);
      if (attempt < options.maxRetries) {
        await sleep(50 * 2 ** attempt);
        continue;
      }
      throw new TransportError(`request to ${url} failed: HTTP ${response.status}`);
    }
    if (!response.ok) {
      let code = 'http_error';
      let message = `HTTP ${response.status}`;
      try {
        const parsed = (await response.json()) as { error_code?: string; message?: string };
        if (parsed.error_code) code = parsed.error_code;
        if (parsed.message) message = parsed.message;
      } catch {
        // non-JSON error body: keep the status-derived message
      }
      throw new RemoteError(code, message, response.status);
    }
    return (await response.json()) as T;
  }
  throw new TransportError(`request to ${url} failed: ${String(lastFailure)}`);
}

export class SwesimClient {
  private readonly options: Required<Pick<ClientOptions, 'baseUrl' | 'timeoutMs' | 'maxRetries'>> & {
    fetchFn: typeof fetch;
  };

  constructor(options: ClientOptions) {
    this.options = {
      baseUrl: options.baseUrl,
      timeoutMs: options.timeoutMs ?? 60_000,
      maxRetries: options.maxRetries ?? 3,
      fetchFn: options.fetchFn ?? fetch,
    };
  }

  async health(): Promise<boolean> {
    try {
      const body = await request<{ status: string }>(this.options, 'GET', '/healthz');
      return body.status === 'ok';
    } catch {
      return false;
    }
  }

  async createSession(init: CreateSessionInit): Promise<RemoteSession> {
    const payload: Record<string, unknown> = {};
    if (init.instanceId !== undefined) payload.instance_id = init.instanceId;
    if (init.instance !== undefined) payload.instance = init.instance;
    if (init.workspaceFiles !== undefined) payload.workspace_files = init.workspaceFiles;
    const body = await request<{ session_id: string; instance_id: string }>(
      this.options,
      'POST',
      '/sessions',
      payload,
    );
    return new RemoteSession(this.options, body.session_id, body.instance_id);
  }
}

export class RemoteSession {
  public done = false;
  public submitted = false;

  constructor(
    private readonly options: Required<Pick<ClientOptions, 'baseUrl' | 'timeoutMs' | 'maxRetries'>> & {
      fetchFn: typeof fetch;
    },
    public readonly sessionId: string,
    public readonly instanceId: string,
  ) {}

  /** Mirrors POST /sessions/{id}/step; rejects locally once the session is done. */
  async step(thought: string, action: ActionInput): Promise<StepResult> {
    if (this.done) {
      throw new SessionClosed(this.sessionId);
    }
    const result = await request<StepResult>(
      this.options,
      'POST',
      `/sessions/${this.sessionId}/step`,
      { thought, action: { raw: '', args: {}, ...action } },
    );
    if (result.done) {
      this.done = true;
      this.submitted = result.termination === 'Submitted';
    }
    return result;
  }

  /** Mirrors POST /sessions/{id}/submit and returns the final patch. */
  async submit(): Promise<string> {
    const body = await request<{ final_patch: string }>(
      this.options,
      'POST',
      `/sessions/${this.sessionId}/submit`,
      {},
    );
    this.done = true;
    this.submitted = true;
    return body.final_patch;
  }

  /** Mirrors POST /sessions/{id}/evaluate; requires a submitted session. */
  async evaluate(m = 1): Promise<EvaluateResult> {
    if (!this.submitted) {
      throw new NotSubmitted(this.sessionId);
    }
    return request<EvaluateResult>(this.options, 'POST', `/sessions/${this.sessionId}/evaluate`, {
      M: m,
    });
  }

  async status(): Promise<SessionStatus> {
    return request<SessionStatus>(this.options, 'GET', `/sessions/${this.sessionId}`);
  }
}

export type { StepFeedback };
