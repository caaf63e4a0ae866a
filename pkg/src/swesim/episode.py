"""Interactive repair loop against the surrogate environment."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Mapping

from . import contexts
from .gateway import ModelEndpoint, ModelGateway, estimate_tokens
from .instances import Instance
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

FORBIDDEN_FEEDBACK = StepFeedback(
    stdout="",
    stderr="command rejected: solution-revealing git commands are disallowed by policy\n",
    exit_code=1,
)


class WorkspaceInitFailure(Exception):
    pass


class AgentActionError(Exception):
    """An agent emitted something that cannot be interpreted as an action."""


@dataclass(frozen=True)
class EpisodeConfig:
    max_turns: int = 150
    max_context_tokens: int = 131072
    episode_timeout: float = 5400.0
    alpha: float = 0.5

    def __post_init__(self) -> None:
        if self.max_turns < 1:
            raise ValueError("max_turns must be >= 1")
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("alpha must lie in [0, 1]")

    @classmethod
    def collection(cls) -> "EpisodeConfig":
        """Preset for training-data collection runs."""
        return cls(max_turns=100)


@dataclass
class TrajectoryStep:
    thought: str
    action: Action
    feedback: StepFeedback
    action_class: str

    def to_dict(self) -> dict:
        return {
            "thought": self.thought,
            "action": self.action.to_dict(),
            "feedback": self.feedback.to_dict(),
            "action_class": self.action_class,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrajectoryStep":
        return cls(
            thought=data["thought"],
            action=Action.from_dict(data["action"]),
            feedback=StepFeedback.from_dict(data["feedback"]),
            action_class=data["action_class"],
        )


TERMINATIONS = ("Submitted", "TurnLimit", "ContextLimit", "Timeout", "AgentError")


@dataclass
class Trajectory:
    """One repair episode: ordered steps, final patch, and outcome."""

    instance_id: str
    steps: list[TrajectoryStep] = field(default_factory=list)
    final_patch: str = ""
    termination: str = "TurnLimit"
    predicted_reward: int | None = None
    test_report: str | None = None
    token_estimate: int = 0

    @property
    def submitted(self) -> bool:
        return self.termination == "Submitted"

    @property
    def turns(self) -> int:
        return len(self.steps)

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "steps": [s.to_dict() for s in self.steps],
            "final_patch": self.final_patch,
            "termination": self.termination,
            "predicted_reward": self.predicted_reward,
            "test_report": self.test_report,
            "token_estimate": self.token_estimate,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Trajectory":
        return cls(
            instance_id=data["instance_id"],
            steps=[TrajectoryStep.from_dict(s) for s in data.get("steps", [])],
            final_patch=data.get("final_patch", ""),
            termination=data.get("termination", "TurnLimit"),
            predicted_reward=data.get("predicted_reward"),
            test_report=data.get("test_report"),
            token_estimate=data.get("token_estimate", 0),
        )


@dataclass
class EpisodeHistory:
    """What the agent callback sees each turn."""

    instance: Instance
    steps: list[TrajectoryStep]
    turn: int

    def transcript(self) -> str:
        return history_text(self.instance, self.steps)


AgentCallback = Callable[[EpisodeHistory], tuple[str, Action]]


def history_text(instance: Instance, steps: list[TrajectoryStep]) -> str:
    """Deterministic transcript used for context-size accounting."""
    parts = [f"ISSUE {instance.instance_id}\n{instance.problem_statement}\n"]
    for i, step in enumerate(steps, start=1):
        parts.append(
            f"[{i}] THOUGHT: {step.thought}\nACTION({step.action.kind}): {step.action.raw}\n"
            f"STDOUT:\n{step.feedback.stdout}\nSTDERR:\n{step.feedback.stderr}\n"
            f"EXIT: {step.feedback.exit_code}\n"
        )
    return "".join(parts)


@dataclass
class Environment:
    """Runtime bundle: gateway, model endpoints, workspace/analysis sources."""

    gateway: ModelGateway
    swt: ModelEndpoint
    swr: ModelEndpoint
    workspace_provider: Callable[[Instance], Mapping[str, str]]
    analysis_provider: Callable[[Instance], str] = lambda instance: ""
    context_config: contexts.ContextConfig = field(default_factory=contexts.ContextConfig)

    def workspace_for(self, instance: Instance) -> WorkspaceState:
        try:
            tree = self.workspace_provider(instance)
        except Exception as exc:
            raise WorkspaceInitFailure(f"cannot materialize workspace for {instance.instance_id}: {exc}") from exc
        return fresh_workspace(dict(tree))

    def analysis_for(self, instance: Instance) -> str:
        return self.analysis_provider(instance)


def run_episode(
    instance: Instance,
    agent: AgentCallback,
    env: Environment,
    config: EpisodeConfig = EpisodeConfig(),
    clock: Callable[[], float] = time.monotonic,
) -> Trajectory:
    """Drive the agent loop: route actions, record steps, enforce limits.

    Navigation/editing goes to the sandbox, code execution to the transition
    model, forbidden commands get synthetic policy feedback, and submit
    freezes the final patch. Limits are checked before each agent call.
    With a replay/mock gateway and a deterministic agent the whole run is
    reproducible end to end.
    """
    state = env.workspace_for(instance)
    analysis = env.analysis_for(instance)
    trajectory = Trajectory(instance_id=instance.instance_id)
    started = clock()
    consecutive_failures = 0

    while True:
        trajectory.token_estimate = estimate_tokens(history_text(instance, trajectory.steps))
        if len(trajectory.steps) >= config.max_turns:
            trajectory.termination = "TurnLimit"
            break
        if trajectory.token_estimate > config.max_context_tokens:
            trajectory.termination = "ContextLimit"
            break
        if clock() - started > config.episode_timeout:
            trajectory.termination = "Timeout"
            break

        try:
            thought, action = agent(EpisodeHistory(instance, trajectory.steps, len(trajectory.steps)))
            if not isinstance(action, Action):
                raise AgentActionError(f"agent returned {type(action).__name__}, not an Action")
        except Exception:
            consecutive_failures += 1
            if consecutive_failures >= 3:
                trajectory.termination = "AgentError"
                break
            continue
        consecutive_failures = 0

        action_class = classify_action(action)
        if action_class.value == ActionClassValue.SUBMIT:
            trajectory.final_patch = current_patch(state)
            trajectory.steps.append(
                TrajectoryStep(thought, action, StepFeedback("", "", 0), action_class.value)
            )
            trajectory.termination = "Submitted"
            break
        if action_class.value == ActionClassValue.NAVIGATION_EDITING:
            state, feedback = execute_sandbox_action(state, action)
        elif action_class.value == ActionClassValue.FORBIDDEN:
            feedback = FORBIDDEN_FEEDBACK
        else:
            ctx = contexts.build_transition_context(
                instance, state, action, analysis, env.context_config
            )
            system_text, user_text = contexts.render_context_prompt("swt", ctx)
            output, _ = env.gateway.query_swt(env.swt, system_text, user_text)
            feedback = StepFeedback(output.stdout, output.stderr, output.exit_code)
        trajectory.steps.append(TrajectoryStep(thought, action, feedback, action_class.value))

    if not trajectory.submitted:
        # Non-submit terminations still expose the workspace diff so the
        # shaped return stays evaluable.
        trajectory.final_patch = current_patch(state)
    trajectory.token_estimate = estimate_tokens(history_text(instance, trajectory.steps))
    return trajectory


def evaluate_trajectory(
    trajectory: Trajectory,
    instance: Instance,
    env: Environment,
) -> tuple[str, int]:
    """Query the reward model once on the final patch's evaluation context.

    Writes test_report/predicted_reward back into the trajectory. Gateway
    transport errors propagate; unparsable output scores 0 (fail-closed).
    """
    if not instance.evaluable:
        raise ValueError(f"instance {instance.instance_id} has no fail-to-pass tests")
    ctx = contexts.build_eval_context(
        instance,
        trajectory.final_patch,
        env.analysis_for(instance),
        dict(env.workspace_provider(instance)),
        env.context_config,
    )
    system_text, user_text = contexts.render_context_prompt("swr", ctx)
    output, _ = env.gateway.query_swr(env.swr, system_text, user_text)
    trajectory.test_report = output.test_report
    trajectory.predicted_reward = output.reward
    return output.test_report, output.reward


def shaped_return(reward: int, terminated_by_submit: bool, alpha: float = 0.5) -> float:
    """Discounted return: the full reward only when the rollout submitted."""
    if not (0.0 <= alpha <= 1.0):
        raise ValueError("alpha must lie in [0, 1]")
    return float(reward) if terminated_by_submit else alpha * float(reward)


def scripted_agent(script: list[tuple[str, Action]]) -> AgentCallback:
    """Test helper: replays a fixed (thought, action) list."""
    def agent(history: EpisodeHistory) -> tuple[str, Action]:
        if history.turn >= len(script):
            raise AgentActionError("script exhausted")
        return script[history.turn]

    return agent


def write_trajectories(path, trajectories: list[Trajectory]) -> None:
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajectories:
            fh.write(json.dumps(traj.to_dict(), ensure_ascii=False) + "\n")


def read_trajectories(path) -> list[Trajectory]:
    import json
    from pathlib import Path

    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(Trajectory.from_dict(json.loads(line)))
    return out
