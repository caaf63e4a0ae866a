export type ActionKind =
  | 'bash'
  | 'editor_view'
  | 'editor_create'
  | 'editor_str_replace'
  | 'editor_insert'
  | 'submit';

export interface ActionInput {
  kind: ActionKind;
  raw?: string;
  args?: Record<string, unknown>;
}

export interface StepFeedback {
  stdout: string;
  stderr: string;
  exit_code: number;
}

export interface StepResult {
  feedback: StepFeedback;
  action_class: string;
  done: boolean;
  termination: string | null;
  turn: number;
}

export interface EvaluateResult {
  test_report: string;
  reward: number;
  votes: number[];
}

export interface SessionStatus {
  session_id: string;
  instance_id: string;
  status: 'active' | 'submitted' | 'terminated';
  turn: number;
  termination: string | null;
}

/** Task-instance record in the dataset schema the service accepts inline. */
export interface InstanceRecord {
  repo: string;
  instance_id: string;
  base_commit: string;
  hints_text?: string;
  problem_statement: string;
  FAIL_TO_PASS: string[];
  PASS_TO_PASS: string[];
  gold_patch: string;
  test_patch: string;
}

export interface CreateSessionInit {
  instanceId?: string;
  instance?: InstanceRecord;
  /** Inline base file tree (path -> content) for the session workspace. */
  workspaceFiles?: Record<string, string>;
}
