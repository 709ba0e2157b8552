"""Shared environment machinery: rewards, episode records, the step protocol.

Both environments expose the same contract: reset(params-bound instance, rng)
returns an observation; step(action) returns a StepOutcome; the episode ends
on goal success, fire contact, or the per-fidelity step cap. The numeric state
lives in the kernel array layout so fused episode runners can drive the same
data without the object wrapper.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import kernels as K
from ..errors import ProtocolViolation, ValidationError
from ..params import GoalSpec, TaskParams

# Kind codes by item name (matches one-hot positions in observations).
ITEM_CODES = {"tree": K.KIND_TREE, "rock": K.KIND_ROCK, "crafting_table": K.KIND_TABLE}
KIND_NAMES = {K.KIND_TREE: "tree", K.KIND_ROCK: "rock", K.KIND_TABLE: "crafting_table",
              K.KIND_FIRE: "fire"}

LF_EPISODE_CAP = 100
HF_EPISODE_CAP = 600


@dataclass(frozen=True)
class RewardScheme:
    """Reward constants; break_bonus only pays while shaping_enabled."""

    step_penalty: float = -1.0
    success_bonus: float = 1000.0
    break_bonus: float = 50.0
    fire_penalty: float = -1000.0
    shaping_enabled: bool = True

    def to_vector(self) -> np.ndarray:
        bonus = self.break_bonus if self.shaping_enabled else 0.0
        return np.array(
            [self.step_penalty, self.success_bonus, bonus, self.fire_penalty],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class StepOutcome:
    observation: np.ndarray
    reward: float
    terminated: bool
    success: bool

    def __post_init__(self) -> None:
        if self.success and not self.terminated:
            raise ValidationError("success implies terminated")


@dataclass
class EpisodeLog:
    """Per-step actions and rewards of one finished episode."""

    actions: list[int] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    success: bool = False

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def total_return(self) -> float:
        return float(sum(self.rewards))

    def record(self, action: int, reward: float) -> None:
        self.actions.append(int(action))
        self.rewards.append(float(reward))


def discounted_return(log: EpisodeLog, gamma: float) -> float:
    """G_0 = sum_k gamma^k r_k."""
    if not 0.0 <= gamma <= 1.0:
        raise ValidationError(f"gamma must be in [0, 1], got {gamma}")
    g = 0.0
    for r in reversed(log.rewards):
        g = r + gamma * g
    return g


def goal_to_code(goal: GoalSpec) -> np.ndarray:
    """Encode a goal as the int64[3] kernel representation."""
    if goal.kind == "navigate":
        return np.array([K.GOAL_CODE_NAVIGATE, ITEM_CODES[goal.item], 0], dtype=np.int64)
    if goal.kind == "break":
        return np.array([K.GOAL_CODE_BREAK, goal.trees, goal.rocks], dtype=np.int64)
    return np.array([K.GOAL_CODE_CRAFT, 0, 0], dtype=np.int64)


class Env:
    """Protocol shell over the kernel state arrays.

    Subclasses bind one TaskParams and fill the arrays on reset; stepping is
    delegated to the per-fidelity kernels. Instances are single-owner.
    """

    fidelity = ""

    def __init__(self, params: TaskParams, scheme: RewardScheme, cap: int | None = None,
                 jit: bool | None = None):
        self.params = params
        self.scheme = scheme
        self._cap = cap if cap is not None else self.default_cap()
        self._rewards = scheme.to_vector()
        self._goal = goal_to_code(params.goal)
        self._kern = K.get_kernels(jit)
        self._steps = 0
        self._terminated = True
        self._started = False
        self._event_terminal = False
        self.inv = np.zeros(3, dtype=np.int64)
        self.progress = np.zeros(2, dtype=np.int64)
        self.agent = np.zeros(3, dtype=np.float64)

    # subclass surface -----------------------------------------------------
    def default_cap(self) -> int:
        raise NotImplementedError

    def obs_dim(self) -> int:
        raise NotImplementedError

    def _place(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def _observe(self, out: np.ndarray) -> None:
        raise NotImplementedError

    def _step_kernel(self, action: int) -> tuple[float, bool, bool]:
        raise NotImplementedError

    # protocol ---------------------------------------------------------------
    def episode_cap(self) -> int:
        return self._cap

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._place(rng)
        self.inv[:] = (self.params.wood_inv, self.params.stone_inv, 0)
        self.progress[:] = 0
        self._steps = 0
        self._terminated = False
        self._started = True
        obs = np.zeros(self.obs_dim(), dtype=np.float64)
        self._observe(obs)
        return obs

    def step(self, action: int) -> StepOutcome:
        if not self._started:
            raise ProtocolViolation("step before reset")
        if self._terminated:
            raise ProtocolViolation("step after terminal state")
        if not 0 <= int(action) < K.N_ACTIONS:
            raise ValidationError(f"action must be in [0, {K.N_ACTIONS}), got {action}")
        reward, done, success = self._step_kernel(int(action))
        self._event_terminal = bool(done)
        self._steps += 1
        if self._steps >= self._cap:
            done = True
        self._terminated = bool(done)
        obs = np.zeros(self.obs_dim(), dtype=np.float64)
        self._observe(obs)
        return StepOutcome(obs, float(reward), bool(done), bool(success))

    @property
    def goal_code(self) -> np.ndarray:
        return self._goal

    @property
    def steps_used(self) -> int:
        return self._steps

    @property
    def terminated(self) -> bool:
        return self._terminated

    @property
    def event_terminal(self) -> bool:
        """Terminal by success or fire, excluding cap truncation (for bootstrapping)."""
        return self._event_terminal
