"""Group-relative policy objective: leave-one-out advantages, clipped ratios,
length normalization, and an independent gradient checker."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradient(Exception):
    pass


@dataclass(frozen=True)
class GrpoConfig:
    eps_low: float = 0.2
    eps_high: float = 0.2
    l_max: int = 1024

    def __post_init__(self) -> None:
        if self.eps_low <= 0 or self.eps_high <= 0:
            raise ValueError("clip widths must be positive")
        if 1.0 - self.eps_low <= 0:
            raise ValueError("lower clip bound must stay positive")
        if self.l_max < 1:
            raise ValueError("l_max must be >= 1")


# Training-run defaults for the optimizer that would consume this objective.
RL_RUN_DEFAULTS = {
    "learning_rate": 1e-6,
    "problems_per_update": 32,
    "rollouts_per_problem": 4,
    "sampling_temperature": 1.0,
    "max_turns": 150,
    "max_context_tokens": 110592,
    "episode_timeout_seconds": 5400,
}


@dataclass
class RolloutGroup:
    """G rollouts' returns and per-token probability ratios."""

    returns: list[float]
    token_ratios: list[list[float]]
    lengths: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.lengths:
            self.lengths = [len(r) for r in self.token_ratios]
        g = len(self.returns)
        if g < 2:
            raise ValueError("a rollout group needs at least 2 rollouts")
        if len(self.token_ratios) != g or len(self.lengths) != g:
            raise ValueError("returns, token_ratios, and lengths must align")
        for i, ratios in enumerate(self.token_ratios):
            if len(ratios) != self.lengths[i]:
                raise ValueError(f"rollout {i}: lengths[{i}] != len(token_ratios[{i}])")
            if self.lengths[i] < 1:
                raise ValueError(f"rollout {i} is empty")
            if any(r <= 0 for r in ratios):
                raise ValueError(f"rollout {i} has a non-positive probability ratio")

    @property
    def size(self) -> int:
        return len(self.returns)

    @classmethod
    def from_json(cls, text: str) -> "RolloutGroup":
        data = json.loads(text)
        return cls(
            returns=[float(r) for r in data["returns"]],
            token_ratios=[[float(x) for x in row] for row in data["token_ratios"]],
            lengths=[int(x) for x in data.get("lengths", [])],
        )


def loo_advantage(returns: list[float]) -> list[float]:
    """Each return minus the mean of the other G-1 returns.

    The advantages always sum to zero and are invariant to adding a constant
    to every return.
    """
    g = len(returns)
    if g < 2:
        raise ValueError("leave-one-out advantage needs at least 2 returns")
    total = sum(returns)
    return [r - (total - r) / (g - 1) for r in returns]


def clipped_surrogate(ratio: float, advantage: float, config: GrpoConfig = GrpoConfig()) -> float:
    """min(ratio * A, clip(ratio, 1 - eps_low, 1 + eps_high) * A)."""
    if ratio <= 0:
        raise ValueError("probability ratio must be positive")
    clipped = min(max(ratio, 1.0 - config.eps_low), 1.0 + config.eps_high)
    return min(ratio * advantage, clipped * advantage)


def objective(group: RolloutGroup, config: GrpoConfig) -> float:
    """Group-mean, length-normalized sum of clipped per-token surrogates."""
    advantages = loo_advantage(group.returns)
    total = 0.0
    for ratios, adv in zip(group.token_ratios, advantages):
        total += sum(clipped_surrogate(r, adv, config) for r in ratios) / config.l_max
    return total / group.size


# ---------------------------------------------------------------------------
# Gradient checking over a toy categorical policy
# ---------------------------------------------------------------------------


def softmax(theta: np.ndarray) -> np.ndarray:
    z = np.exp(theta - np.max(theta))
    return z / z.sum()


@dataclass
class ToyGroup:
    """A rollout group whose ratios come from a toy softmax policy.

    tokens[i][t] indexes the action taken; old_probs is the frozen behavior
    policy. Ratios are softmax(theta)[token] / old_probs[token].
    """

    tokens: list[list[int]]
    returns: list[float]
    old_probs: np.ndarray

    def build(self, theta: np.ndarray) -> RolloutGroup:
        probs = softmax(theta)
        ratios = [[float(probs[t] / self.old_probs[t]) for t in toks] for toks in self.tokens]
        return RolloutGroup(returns=list(self.returns), token_ratios=ratios)


def toy_objective(theta: np.ndarray, group: ToyGroup, config: GrpoConfig) -> float:
    return objective(group.build(theta), config)


def analytic_gradient(theta: np.ndarray, group: ToyGroup, config: GrpoConfig) -> np.ndarray:
    """Gradient of the objective w.r.t. theta, branches frozen at theta.

    Inside the clip band both branches share the derivative A * dr/dtheta;
    outside it the clipped branch is constant, so only tokens whose min
    picks the moving branch contribute.
    """
    probs = softmax(theta)
    advantages = loo_advantage(group.returns)
    grad = np.zeros_like(theta, dtype=float)
    lo, hi = 1.0 - config.eps_low, 1.0 + config.eps_high
    g = len(group.returns)
    for toks, adv in zip(group.tokens, advantages):
        for tok in toks:
            ratio = float(probs[tok] / group.old_probs[tok])
            unclipped = ratio * adv
            clipped = min(max(ratio, lo), hi) * adv
            if unclipped < clipped:
                moving = True  # min takes the unclipped branch
            elif unclipped > clipped:
                moving = lo < ratio < hi  # clipped branch moves only in-band
            else:
                moving = True  # branches coincide (in-band), same derivative
            if not moving or adv == 0.0:
                continue
            # d ratio / d theta_j = ratio * (1[j == tok] - probs[j])
            dratio = ratio * (np.eye(len(theta))[tok] - probs)
            grad += adv * dratio / (g * config.l_max)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient(str(grad))
    return grad


def numeric_gradient(theta: np.ndarray, group: ToyGroup, config: GrpoConfig, h: float) -> np.ndarray:
    grad = np.zeros_like(theta, dtype=float)
    for j in range(len(theta)):
        up = theta.copy()
        down = theta.copy()
        up[j] += h
        down[j] -= h
        grad[j] = (toy_objective(up, group, config) - toy_objective(down, group, config)) / (2 * h)
    return grad


def is_smooth_point(theta: np.ndarray, group: ToyGroup, config: GrpoConfig, margin: float = 1e-3) -> bool:
    """False when any active ratio sits within margin of a clip boundary,
    where the min/clip construction has a kink."""
    probs = softmax(theta)
    lo, hi = 1.0 - config.eps_low, 1.0 + config.eps_high
    advantages = loo_advantage(group.returns)
    for toks, adv in zip(group.tokens, advantages):
        if adv == 0.0:
            continue
        for tok in toks:
            ratio = float(probs[tok] / group.old_probs[tok])
            if abs(ratio - lo) <= margin or abs(ratio - hi) <= margin:
                return False
    return True


def grad_check(theta: np.ndarray, group: ToyGroup, config: GrpoConfig, h: float = 1e-5) -> float:
    """Max relative deviation between analytic and central-difference gradients."""
    analytic = analytic_gradient(theta, group, config)
    numeric = numeric_gradient(theta, group, config, h)
    if not (np.all(np.isfinite(analytic)) and np.all(np.isfinite(numeric))):
        raise NonFiniteGradient("gradient check produced non-finite values")
    deviation = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(deviation.max())


def random_toy_group(
    rng: random.Random,
    n_actions: int = 5,
    group_size: int = 4,
    max_tokens: int = 6,
) -> tuple[np.ndarray, ToyGroup]:
    """A random smooth-ish gradient-check instance (caller should still
    screen with is_smooth_point before asserting tolerances)."""
    theta = np.array([rng.uniform(-1.0, 1.0) for _ in range(n_actions)])
    old_logits = np.array([rng.uniform(-1.0, 1.0) for _ in range(n_actions)])
    old_probs = softmax(old_logits)
    tokens = [
        [rng.randrange(n_actions) for _ in range(rng.randint(1, max_tokens))]
        for _ in range(group_size)
    ]
    returns = [float(rng.randint(0, 1)) for _ in range(group_size)]
    if len(set(returns)) == 1:
        returns[0] = 1.0 - returns[0]
    return theta, ToyGroup(tokens=tokens, returns=returns, old_probs=old_probs)
