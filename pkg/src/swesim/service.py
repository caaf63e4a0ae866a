"""HTTP service exposing episodes to external agent scaffolds."""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field, replace

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import contexts, tts
from .episode import Environment, Trajectory, TrajectoryStep
from .gateway import estimate_tokens
from .instances import Instance, InstanceError, parse_instance
from .sandbox import (
    Action,
    ActionClassValue,
    StepFeedback,
    WorkspaceState,
    classify_action,
    current_patch,
    execute_sandbox_action,
    fresh_workspace,
)
from .episode import FORBIDDEN_FEEDBACK, history_text


@dataclass(frozen=True)
class ServiceConfig:
    max_turns: int = 150
    max_context_tokens: int = 131072
    session_ttl: float = 10800.0  # 2x the default episode timeout
    evaluate_votes: int = 1


class ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class Session:
    session_id: str
    instance: Instance
    workspace: WorkspaceState
    status: str = "active"  # active | submitted | terminated
    termination: str | None = None
    final_patch: str | None = None
    steps: list[TrajectoryStep] = field(default_factory=list)
    created_at: float = field(default_factory=time.monotonic)
    last_access: float = field(default_factory=time.monotonic)
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def turn(self) -> int:
        return len(self.steps)

    def trajectory(self) -> Trajectory:
        traj = Trajectory(instance_id=self.instance.instance_id)
        traj.steps = list(self.steps)
        traj.final_patch = self.final_patch if self.final_patch is not None else ""
        traj.termination = self.termination or ("Submitted" if self.status == "submitted" else "TurnLimit")
        traj.token_estimate = estimate_tokens(history_text(self.instance, traj.steps))
        return traj


def create_app(
    env: Environment,
    dataset: dict[str, Instance] | None = None,
    config: ServiceConfig = ServiceConfig(),
) -> FastAPI:
    """Build the service; episode semantics mirror run_episode step by step."""
    app = FastAPI(title="swesim environment service")
    sessions: dict[str, Session] = {}
    registry_lock = threading.Lock()
    dataset = dataset or {}

    def error(status: int, code: str, message: str) -> ServiceError:
        return ServiceError(status, code, message)

    @app.exception_handler(ServiceError)
    async def handle_service_error(request: Request, exc: ServiceError):
        return JSONResponse(
            status_code=exc.status, content={"error_code": exc.code, "message": exc.message}
        )

    def get_session(session_id: str) -> Session:
        with registry_lock:
            session = sessions.get(session_id)
            if session is not None and time.monotonic() - session.last_access > config.session_ttl:
                del sessions[session_id]
                session = None
        if session is None:
            raise error(404, "unknown_session", f"no active session {session_id}")
        session.last_access = time.monotonic()
        return session

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok"}

    @app.post("/sessions", status_code=201)
    async def create_session(body: dict):
        instance: Instance
        if "instance" in body:
            try:
                instance = parse_instance(body["instance"])
            except InstanceError as exc:
                raise error(400, "invalid_instance", str(exc))
        elif "instance_id" in body:
            instance = dataset.get(body["instance_id"])
            if instance is None:
                raise error(404, "unknown_instance", f"no instance {body['instance_id']}")
        else:
            raise error(400, "missing_instance", "provide instance_id or an inline instance")

        if "workspace_files" in body:
            tree = {str(k): str(v) for k, v in body["workspace_files"].items()}
            workspace = fresh_workspace(tree)
        else:
            try:
                workspace = env.workspace_for(instance)
            except Exception as exc:
                raise error(400, "workspace_unavailable", str(exc))

        session = Session(session_id=uuid.uuid4().hex, instance=instance, workspace=workspace)
        with registry_lock:
            sessions[session.session_id] = session
        return {"session_id": session.session_id, "instance_id": instance.instance_id}

    @app.get("/sessions/{session_id}")
    async def session_status(session_id: str):
        session = get_session(session_id)
        return {
            "session_id": session.session_id,
            "instance_id": session.instance.instance_id,
            "status": session.status,
            "turn": session.turn,
            "termination": session.termination,
        }

    @app.post("/sessions/{session_id}/step")
    async def step(session_id: str, body: dict):
        session = get_session(session_id)
        if not session.lock.acquire(blocking=False):
            raise error(409, "concurrent_step", "another step is in flight on this session")
        try:
            if session.status != "active":
                raise error(409, "session_closed", f"session is {session.status}")
            if session.turn >= config.max_turns:
                session.status = "terminated"
                session.termination = "TurnLimit"
                session.final_patch = current_patch(session.workspace)
                raise error(409, "turn_limit", "session exceeded its turn limit")
            token_estimate = estimate_tokens(history_text(session.instance, session.steps))
            if token_estimate > config.max_context_tokens:
                session.status = "terminated"
                session.termination = "ContextLimit"
                session.final_patch = current_patch(session.workspace)
                raise error(409, "context_limit", "session exceeded its context budget")

            thought = str(body.get("thought", ""))
            try:
                action = Action.from_dict(body["action"])
            except (KeyError, TypeError, ValueError) as exc:
                raise error(400, "invalid_action", f"unparsable action: {exc}")

            action_class = classify_action(action)
            done = False
            termination = None
            if action_class.value == ActionClassValue.SUBMIT:
                session.final_patch = current_patch(session.workspace)
                session.status = "submitted"
                session.termination = "Submitted"
                feedback = StepFeedback("", "", 0)
                done = True
                termination = "Submitted"
            elif action_class.value == ActionClassValue.NAVIGATION_EDITING:
                session.workspace, feedback = execute_sandbox_action(session.workspace, action)
            elif action_class.value == ActionClassValue.FORBIDDEN:
                feedback = FORBIDDEN_FEEDBACK
            else:
                ctx = contexts.build_transition_context(
                    session.instance,
                    session.workspace,
                    action,
                    env.analysis_for(session.instance),
                    env.context_config,
                )
                system_text, user_text = contexts.render_context_prompt("swt", ctx)
                output, _ = env.gateway.query_swt(env.swt, system_text, user_text)
                feedback = StepFeedback(output.stdout, output.stderr, output.exit_code)

            session.steps.append(TrajectoryStep(thought, action, feedback, action_class.value))
            return {
                "feedback": feedback.to_dict(),
                "action_class": action_class.value,
                "done": done,
                "termination": termination,
                "turn": session.turn,
            }
        finally:
            session.lock.release()

    @app.post("/sessions/{session_id}/submit")
    async def submit(session_id: str, body: dict | None = None):
        session = get_session(session_id)
        if not session.lock.acquire(blocking=False):
            raise error(409, "concurrent_step", "another step is in flight on this session")
        try:
            if session.status == "terminated":
                raise error(409, "session_closed", "session already terminated")
            if session.status != "submitted":
                session.final_patch = current_patch(session.workspace)
                session.status = "submitted"
                session.termination = "Submitted"
                session.steps.append(
                    TrajectoryStep("", Action.submit(), StepFeedback("", "", 0), ActionClassValue.SUBMIT)
                )
            return {"final_patch": session.final_patch}
        finally:
            session.lock.release()

    @app.post("/sessions/{session_id}/evaluate")
    async def evaluate(session_id: str, body: dict | None = None):
        session = get_session(session_id)
        if session.status != "submitted":
            raise error(409, "not_submitted", "submit the session before evaluating")
        body = body or {}
        m = int(body.get("M", config.evaluate_votes))
        if m < 1:
            raise error(400, "invalid_votes", "M must be >= 1")
        trajectory = session.trajectory()
        if not session.instance.evaluable:
            raise error(400, "not_evaluable", "instance has no fail-to-pass tests")
        # Evaluate against the session's own base tree so inline-workspace
        # sessions work even when the shared provider does not know them.
        base_tree = dict(session.workspace.base)
        session_env = replace(env, workspace_provider=lambda instance: base_tree)
        if m == 1:
            ctx = contexts.build_eval_context(
                session.instance,
                trajectory.final_patch,
                env.analysis_for(session.instance),
                base_tree,
                env.context_config,
            )
            system_text, user_text = contexts.render_context_prompt("swr", ctx)
            output, _ = env.gateway.query_swr(env.swr, system_text, user_text)
            return {"test_report": output.test_report, "reward": output.reward, "votes": [output.reward]}
        score = tts.score_trajectory(trajectory, session.instance, session_env, m=m)
        majority = 1 if sum(score.votes) * 2 > len(score.votes) else 0
        return {
            "test_report": f"majority of {m} votes: {list(score.votes)}",
            "reward": majority,
            "votes": list(score.votes),
        }

    return app


def run_service(env: Environment, dataset, config: ServiceConfig, host: str, port: int) -> None:
    import uvicorn

    app = create_app(env, dataset, config)
    uvicorn.run(app, host=host, port=port, log_level="warning")
