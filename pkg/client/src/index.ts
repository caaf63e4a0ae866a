export { RemoteSession, SwesimClient } from './client.js';
export type { ClientOptions } from './client.js';
export {
  NotSubmitted,
  RemoteError,
  SessionClosed,
  SwesimClientError,
  TransportError,
} from './errors.js';
export type {
  ActionInput,
  ActionKind,
  CreateSessionInit,
  EvaluateResult,
  InstanceRecord,
  SessionStatus,
  StepFeedback,
  StepResult,
} from './types.js';
