export class SwesimClientError extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'SwesimClientError';
  }
}

/** The request never produced an HTTP response (network/timeout). */
export class TransportError extends SwesimClientError {
  public readonly cause?: unknown;

  constructor(message: string, cause?: unknown) {
    super(message);
    this.name = 'TransportError';
    this.cause = cause;
  }
}

/** The service answered with a machine-readable error body. */
export class RemoteError extends SwesimClientError {
  public readonly code: string;
  public readonly status: number;

  constructor(code: string, message: string, status: number) {
    super(message);
    this.name = 'RemoteError';
    this.code = code;
    this.status = status;
  }
}

/** Local guard: the session already finished; no request was sent. */
export class SessionClosed extends SwesimClientError {
  constructor(sessionId: string) {
    super(`session ${sessionId} is already closed`);
    this.name = 'SessionClosed';
  }
}

/** Local guard: evaluate requires a submitted session; no request was sent. */
export class NotSubmitted extends SwesimClientError {
  constructor(sessionId: string) {
    super(`session ${sessionId} has not been submitted yet`);
    this.name = 'NotSubmitted';
  }
}
