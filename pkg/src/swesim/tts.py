"""Test-time scaling: multi-sample reward-model voting and selection."""

from __future__ import annotations

from dataclasses import dataclass

from . import contexts
from .episode import Environment, Trajectory
from .gateway import GatewayError, LogprobsUnsupported, ModelEndpoint, softmax_yes_score
from .instances import Instance

# Temperature-0 votes would be identical; voting needs stochastic samples.
DEFAULT_VOTE_TEMPERATURE = 0.7


@dataclass(frozen=True)
class CandidateScore:
    """One candidate's votes and their mean."""

    candidate_index: int
    votes: tuple[int, ...]
    score: float
    turns: int
    flagged: tuple[bool, ...] = ()  # True where a vote fell back to 0 on failure

    def __post_init__(self) -> None:
        expected = sum(self.votes) / len(self.votes)
        if abs(self.score - expected) > 1e-12:
            raise ValueError("score must equal the mean of the votes")

    def to_dict(self) -> dict:
        return {
            "candidate_index": self.candidate_index,
            "votes": list(self.votes),
            "score": self.score,
            "turns": self.turns,
            "flagged_votes": sum(self.flagged),
        }


def _vote_endpoint(endpoint: ModelEndpoint, m: int, vote_temperature: float) -> ModelEndpoint:
    if m > 1:
        return endpoint.with_temperature(vote_temperature)
    return endpoint


def score_trajectory(
    trajectory: Trajectory,
    instance: Instance,
    env: Environment,
    m: int = 3,
    candidate_index: int = 0,
    vote_temperature: float = DEFAULT_VOTE_TEMPERATURE,
) -> CandidateScore:
    """Query the reward model M times on one evaluation context.

    The context is built once and reused (it is deterministic; variance
    comes from sampling). Votes that fail to parse or cannot reach the
    endpoint are recorded as 0 with a flag, never dropped.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    ctx = contexts.build_eval_context(
        instance,
        trajectory.final_patch,
        env.analysis_for(instance),
        dict(env.workspace_provider(instance)),
        env.context_config,
    )
    system_text, user_text = contexts.render_context_prompt("swr", ctx)
    endpoint = _vote_endpoint(env.swr, m, vote_temperature)
    votes: list[int] = []
    flagged: list[bool] = []
    for _ in range(m):
        try:
            output, ok = env.gateway.query_swr(endpoint, system_text, user_text)
            votes.append(output.reward)
            flagged.append(not ok)
        except GatewayError:
            votes.append(0)
            flagged.append(True)
    return CandidateScore(
        candidate_index=candidate_index,
        votes=tuple(votes),
        score=sum(votes) / m,
        turns=trajectory.turns,
        flagged=tuple(flagged),
    )


def select_best(
    candidates: list[Trajectory],
    instance: Instance,
    env: Environment,
    n: int | None = None,
    m: int = 3,
    vote_temperature: float = DEFAULT_VOTE_TEMPERATURE,
) -> tuple[int, list[CandidateScore]]:
    """Score N candidates with M votes each and pick the argmax.

    Ties break deterministically toward fewer turns, then the lower index.
    """
    if not candidates:
        raise ValueError("candidate list is empty")
    if n is not None and n != len(candidates):
        raise ValueError(f"expected {n} candidates, got {len(candidates)}")
    scores = [
        score_trajectory(traj, instance, env, m, candidate_index=i, vote_temperature=vote_temperature)
        for i, traj in enumerate(candidates)
    ]
    winner = max(range(len(scores)), key=lambda i: (scores[i].score, -scores[i].turns, -i))
    return winner, scores


def selection_report(winner: int, scores: list[CandidateScore], m: int) -> dict:
    return {
        "winner": winner,
        "candidates": [s.to_dict() for s in scores],
        "total_swr_queries": len(scores) * m,
    }


def format_score_table(winner: int, scores: list[CandidateScore]) -> str:
    lines = ["idx  score  votes         turns  winner"]
    for s in scores:
        votes = ",".join(str(v) for v in s.votes)
        mark = "  <--" if s.candidate_index == winner else ""
        lines.append(f"{s.candidate_index:<4d} {s.score:<6.3f} {votes:<13s} {s.turns:<6d}{mark}")
    return "\n".join(lines) + "\n"


def baseline_softmax_select(
    candidates: list[Trajectory],
    instance: Instance,
    env: Environment,
) -> tuple[int, list[float]]:
    """Single-token yes/no scorer behind the same selection interface.

    Usable only when the backend exposes token log-probabilities; raises
    LogprobsUnsupported otherwise.
    """
    if not candidates:
        raise ValueError("candidate list is empty")
    backend = env.gateway.backend
    if not hasattr(backend, "yes_no_logprobs"):
        raise LogprobsUnsupported(
            "the configured backend does not expose yes/no token log-probabilities"
        )
    scores: list[float] = []
    for traj in candidates:
        ctx = contexts.build_eval_context(
            instance,
            traj.final_patch,
            env.analysis_for(instance),
            dict(env.workspace_provider(instance)),
            env.context_config,
        )
        system_text, user_text = contexts.render_context_prompt("swr", ctx)
        l_yes, l_no = backend.yes_no_logprobs(env.swr, system_text, user_text)
        scores.append(softmax_yes_score(l_yes, l_no))
    winner = max(range(len(scores)), key=lambda i: (scores[i], -candidates[i].turns, -i))
    return winner, scores
