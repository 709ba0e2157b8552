"""Grid and planar crafting environments sharing one action/observation model."""

from ..params import HF, LF, TaskParams
from .core import (
    Env,
    EpisodeLog,
    HF_EPISODE_CAP,
    LF_EPISODE_CAP,
    RewardScheme,
    StepOutcome,
    discounted_return,
    goal_to_code,
)
from .gridworld import GridEnv
from .planar import PlanarEnv


def make_env(fidelity: str, params: TaskParams, scheme: RewardScheme,
             cap: int | None = None, jit: bool | None = None) -> Env:
    if fidelity == LF:
        return GridEnv(params, scheme, cap, jit)
    if fidelity == HF:
        return PlanarEnv(params, scheme, cap, jit)
    raise ValueError(f"unknown fidelity {fidelity!r}")


__all__ = [
    "Env",
    "EpisodeLog",
    "GridEnv",
    "HF_EPISODE_CAP",
    "LF_EPISODE_CAP",
    "PlanarEnv",
    "RewardScheme",
    "StepOutcome",
    "discounted_return",
    "goal_to_code",
    "make_env",
]
