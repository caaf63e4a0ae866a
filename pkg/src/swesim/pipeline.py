"""Training-sample extraction, trajectory filtering, balancing, CoT targets."""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from typing import Callable, Mapping

from . import contexts
from .contexts import ContextConfig, EvalContext, TransitionContext
from .episode import Trajectory
from .gateway import SwtOutput
from .instances import Instance
from .sandbox import ActionClassValue, execute_sandbox_action, fresh_workspace

logger = logging.getLogger(__name__)

# Feedback substrings that mark a corrupted recording environment rather
# than real program behavior; such trajectories are unusable as supervision.
DEFAULT_CORRUPTION_MARKERS = (
    "error pulling image",
    "failed to pull image",
    "image not found",
    "dependency installation failed",
    "no space left on device",
    "container exited unexpectedly",
)


class MissingGroundTruth(Exception):
    def __init__(self, step_index: int):
        super().__init__(f"no recorded ground-truth output for step {step_index}")
        self.step_index = step_index


class EmptyCot(Exception):
    pass


@dataclass(frozen=True)
class TransitionSample:
    """One (execution context, real feedback) supervision pair."""

    context: TransitionContext
    target: SwtOutput


@dataclass(frozen=True)
class RewardSample:
    """One (evaluation context, real test outcome) supervision pair."""

    context: EvalContext
    target: tuple[str, int]  # (test_report, reward)


@dataclass
class GroundTruth:
    """Recorded real outputs for a trajectory, keyed by step index."""

    step_outputs: dict[int, SwtOutput] = field(default_factory=dict)
    eval: tuple[str, int] | None = None

    @classmethod
    def from_trajectory(cls, trajectory: Trajectory) -> "GroundTruth":
        """Treat the recorded feedback itself as ground truth (the rollout
        was driven against a real backend or a replay log)."""
        outputs = {}
        for i, step in enumerate(trajectory.steps):
            if step.action_class == ActionClassValue.CODE_EXECUTION:
                outputs[i] = SwtOutput(
                    stdout=step.feedback.stdout,
                    stderr=step.feedback.stderr,
                    exit_code=step.feedback.exit_code,
                )
        evaluation = None
        if trajectory.test_report is not None and trajectory.predicted_reward is not None:
            evaluation = (trajectory.test_report, trajectory.predicted_reward)
        return cls(step_outputs=outputs, eval=evaluation)


def is_corrupted(
    trajectory: Trajectory, markers: tuple[str, ...] = DEFAULT_CORRUPTION_MARKERS
) -> bool:
    for step in trajectory.steps:
        text = (step.feedback.stdout + "\n" + step.feedback.stderr).lower()
        if any(marker in text for marker in markers):
            return True
    return False


def extract_training_samples(
    trajectory: Trajectory,
    instance: Instance,
    base_tree: Mapping[str, str],
    ground_truth: GroundTruth | None = None,
    analysis: str = "",
    config: ContextConfig = ContextConfig(),
    corruption_markers: tuple[str, ...] = DEFAULT_CORRUPTION_MARKERS,
) -> tuple[list[TransitionSample], RewardSample | None]:
    """Replay a trajectory and pair each execution step's context with its
    recorded real output, plus one reward sample for the terminal evaluation.

    A single rollout yields many samples this way, from failed rollouts as
    much as successful ones. Corrupted-environment trajectories are skipped.
    Raises MissingGroundTruth when an execution step has no recorded output.
    """
    if is_corrupted(trajectory, corruption_markers):
        logger.warning("skipping corrupted-environment trajectory %s", trajectory.instance_id)
        return [], None
    if ground_truth is None:
        ground_truth = GroundTruth.from_trajectory(trajectory)

    samples: list[TransitionSample] = []
    state = fresh_workspace(dict(base_tree))
    for idx, step in enumerate(trajectory.steps):
        if step.action_class == ActionClassValue.NAVIGATION_EDITING:
            state, _ = execute_sandbox_action(state, step.action)
        elif step.action_class == ActionClassValue.CODE_EXECUTION:
            ctx = contexts.build_transition_context(instance, state, step.action, analysis, config)
            if idx not in ground_truth.step_outputs:
                raise MissingGroundTruth(idx)
            samples.append(TransitionSample(context=ctx, target=ground_truth.step_outputs[idx]))

    reward_sample = None
    if ground_truth.eval is not None and instance.evaluable:
        eval_ctx = contexts.build_eval_context(
            instance, trajectory.final_patch, analysis, dict(base_tree), config
        )
        reward_sample = RewardSample(context=eval_ctx, target=ground_truth.eval)
    return samples, reward_sample


# ---------------------------------------------------------------------------
# Dual-stage filtering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FilterLimits:
    max_turns: int = 100
    max_tokens: int = 80_000


DROP_REASONS = (
    "no_submission",
    "turn_limit_exceeded",
    "token_limit_exceeded",
    "timeout",
    "malformed_action",
    "negative_reward",
)


@dataclass(frozen=True)
class FilterVerdict:
    keep: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.keep


KEEP = FilterVerdict(True)


def filter_trajectory(
    trajectory: Trajectory,
    limits: FilterLimits = FilterLimits(),
    swr_verdict: int | None = None,
) -> FilterVerdict:
    """Rule-stage plus verification-stage filter, first matching drop reason.

    The rule limits are the data-quality caps, independent of whatever the
    episode engine allowed at rollout time. swr_verdict None means the
    verification stage has not run; only an explicit 0 drops.
    """
    if trajectory.termination != "Submitted":
        return FilterVerdict(False, "no_submission")
    if trajectory.turns > limits.max_turns:
        return FilterVerdict(False, "turn_limit_exceeded")
    if trajectory.token_estimate > limits.max_tokens:
        return FilterVerdict(False, "token_limit_exceeded")
    if trajectory.termination == "Timeout":
        return FilterVerdict(False, "timeout")
    if trajectory.termination == "AgentError":
        return FilterVerdict(False, "malformed_action")
    if swr_verdict == 0:
        return FilterVerdict(False, "negative_reward")
    return KEEP


def balance_labels(samples: list[RewardSample], seed: int) -> list[RewardSample]:
    """Subsample to an exact 1:1 reward-0/reward-1 ratio, deterministically.

    Output preserves input order and is a subset of the input; when one
    class is empty the result is empty (with a warning), since no balanced
    subset exists.
    """
    positives = [i for i, s in enumerate(samples) if s.target[1] == 1]
    negatives = [i for i, s in enumerate(samples) if s.target[1] != 1]
    if not positives or not negatives:
        logger.warning(
            "cannot balance labels: %d positives, %d negatives", len(positives), len(negatives)
        )
        return []
    k = min(len(positives), len(negatives))
    rng = random.Random(seed)
    keep = set(rng.sample(positives, k)) | set(rng.sample(negatives, k))
    return [s for i, s in enumerate(samples) if i in keep]


# ---------------------------------------------------------------------------
# Reverse-reasoning CoT targets
# ---------------------------------------------------------------------------


def canonical_target_json(ground_truth: SwtOutput | tuple[str, int]) -> str:
    if isinstance(ground_truth, SwtOutput):
        return ground_truth.to_json()
    report, reward = ground_truth
    return json.dumps({"test_report": report, "reward": reward}, ensure_ascii=False)


def format_cot_target(cot: str, ground_truth: SwtOutput | tuple[str, int]) -> str:
    """Supervision target: the reasoning in think tags, then the exact output."""
    if not cot.strip():
        raise EmptyCot("cannot format an empty reasoning trace")
    return f"<think>{cot}</think>{canonical_target_json(ground_truth)}"


@dataclass(frozen=True)
class LeakVerdict:
    passed: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.passed


def _ground_truth_lines(ground_truth: SwtOutput | tuple[str, int]) -> list[str]:
    if isinstance(ground_truth, SwtOutput):
        text = ground_truth.stdout + "\n" + ground_truth.stderr
    else:
        text = ground_truth[0]
    return [line.strip() for line in text.splitlines() if len(line.strip()) >= 20]


def leak_check(
    cot: str,
    ground_truth: SwtOutput | tuple[str, int],
    judge: Callable[[str], bool] | None = None,
) -> LeakVerdict:
    """Reject reasoning that copies the answer it is supposed to derive.

    The deterministic rule fails any ground-truth line of >= 20 characters
    appearing verbatim in the reasoning; an optional judge callback can
    additionally reject on quality grounds.
    """
    for line in _ground_truth_lines(ground_truth):
        if line in cot:
            return LeakVerdict(False, "verbatim_leak")
    if judge is not None and not judge(cot):
        return LeakVerdict(False, "judge_rejected")
    return LeakVerdict(True)


# ---------------------------------------------------------------------------
# Training-record serialization
# ---------------------------------------------------------------------------


def transition_training_record(sample: TransitionSample, cot: str | None = None) -> dict:
    system, user = contexts.render_context_prompt("swt", sample.context)
    target = format_cot_target(cot, sample.target) if cot else sample.target.to_json()
    return {"input": {"system": system, "user": user}, "target": target}


def reward_training_record(sample: RewardSample, cot: str | None = None) -> dict:
    system, user = contexts.render_context_prompt("swr", sample.context)
    target = format_cot_target(cot, sample.target) if cot else canonical_target_json(sample.target)
    return {"input": {"system": system, "user": user}, "target": target}
