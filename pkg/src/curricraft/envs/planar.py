"""High-fidelity planar environment: continuous poses, disc objects, rays."""

from __future__ import annotations

import math

import numpy as np

from .. import kernels as K
from ..errors import PlacementFailure, ValidationError
from ..params import HF, TaskParams, feasible
from .core import Env, HF_EPISODE_CAP, KIND_NAMES, RewardScheme

_REJECTION_BUDGET = 10_000


def place_planar(
    params: TaskParams, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Rejection-sample non-overlapping disc centers and the agent pose.

    Consumes the stream as uniform (x, y) pairs per attempt, in canonical
    kind order, then the agent (x, y) and heading. Fails after 10^4 rejected
    draws in total.
    """
    w, h = params.width, params.height
    r = K.RADIUS
    if min(w, h) < 2 * r:
        raise PlacementFailure(f"arena {w}x{h} m narrower than one disc")
    kinds = (
        [K.KIND_TREE] * params.trees_env
        + [K.KIND_ROCK] * params.rocks_env
        + [K.KIND_TABLE] * params.crafting_tables
        + [K.KIND_FIRE] * params.fires_env
    )
    n = len(kinds)
    xy = np.zeros((n, 2), dtype=np.float64)
    min_d2 = (2 * r) ** 2
    rejections = 0
    placed = 0
    while placed <= n:  # objects, then one more pass for the agent
        x = rng.uniform(r, w - r)
        y = rng.uniform(r, h - r)
        clear = True
        for j in range(min(placed, n)):
            dx = xy[j, 0] - x
            dy = xy[j, 1] - y
            if dx * dx + dy * dy < min_d2:
                clear = False
                break
        if clear:
            if placed < n:
                xy[placed] = (x, y)
            else:
                theta = rng.uniform(0.0, 2.0 * math.pi)
                agent = np.array([x, y, theta], dtype=np.float64)
                return (
                    np.array(kinds, dtype=np.int64),
                    xy,
                    np.ones(n, dtype=np.int64),
                    agent,
                )
            placed += 1
        else:
            rejections += 1
            if rejections >= _REJECTION_BUDGET:
                raise PlacementFailure(
                    f"{rejections} rejected placements for {n} discs in {w}x{h} m"
                )
    raise AssertionError("unreachable")


class PlanarEnv(Env):
    fidelity = HF

    def __init__(self, params: TaskParams, scheme: RewardScheme, cap: int | None = None,
                 jit: bool | None = None):
        if not feasible(params, HF):
            raise ValidationError(f"infeasible planar task: {params.to_dict()}")
        super().__init__(params, scheme, cap, jit)
        self.obj_kind, self.obj_xy, self.obj_alive = K.dummy_objects()

    def default_cap(self) -> int:
        return HF_EPISODE_CAP

    def obs_dim(self) -> int:
        return K.HF_OBS_DIM

    def _place(self, rng: np.random.Generator) -> None:
        self.obj_kind, self.obj_xy, self.obj_alive, self.agent = place_planar(self.params, rng)

    def _observe(self, out: np.ndarray) -> None:
        self._kern["hf_observe"](
            self.obj_kind, self.obj_xy, self.obj_alive, self.agent,
            self.inv[0], self.inv[1], out, self.params.width, self.params.height,
        )

    def _step_kernel(self, action: int) -> tuple[float, bool, bool]:
        return self._kern["hf_step"](
            self.obj_kind, self.obj_xy, self.obj_alive, self.agent, self.inv,
            self.progress, action, self._goal, self._rewards,
            self.params.width, self.params.height,
        )

    def layout_dict(self) -> dict:
        objects = [
            {
                "kind": KIND_NAMES[int(k)],
                "x": float(x),
                "y": float(y),
                "radius": K.RADIUS,
                "alive": bool(a),
            }
            for k, (x, y), a in zip(self.obj_kind, self.obj_xy, self.obj_alive)
        ]
        return {
            "fidelity": self.fidelity,
            "width": self.params.width,
            "height": self.params.height,
            "agent": [float(self.agent[0]), float(self.agent[1]), float(self.agent[2])],
            "objects": objects,
        }
