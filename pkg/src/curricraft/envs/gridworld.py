"""Low-fidelity grid environment: discrete cells, quadrant headings."""

from __future__ import annotations

import numpy as np

from .. import kernels as K
from ..errors import PlacementFailure
from ..params import LF, TaskParams, feasible
from ..errors import ValidationError
from .core import Env, KIND_NAMES, LF_EPISODE_CAP, RewardScheme


def place_grid(params: TaskParams, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Scatter objects and the agent on distinct random cells.

    Consumes the stream as: one permutation of all cells, then one heading
    draw. Objects fill the first cells of the permutation in canonical kind
    order (trees, rocks, tables, fires); the agent takes the next cell.
    """
    w = int(round(params.width))
    h = int(round(params.height))
    kinds = (
        [K.KIND_TREE] * params.trees_env
        + [K.KIND_ROCK] * params.rocks_env
        + [K.KIND_TABLE] * params.crafting_tables
        + [K.KIND_FIRE] * params.fires_env
    )
    n = len(kinds)
    if n + 1 > w * h:
        raise PlacementFailure(f"{n} objects + agent exceed {w}x{h} cells")
    perm = rng.permutation(w * h)
    grid = np.full((w, h), -1, dtype=np.int64)
    for kind, cell in zip(kinds, perm[:n]):
        grid[cell // h, cell % h] = kind
    agent_cell = perm[n]
    heading = int(rng.integers(4))
    agent = np.array([agent_cell // h, agent_cell % h, heading], dtype=np.float64)
    return grid, agent


class GridEnv(Env):
    fidelity = LF

    def __init__(self, params: TaskParams, scheme: RewardScheme, cap: int | None = None,
                 jit: bool | None = None):
        if not feasible(params, LF):
            raise ValidationError(f"infeasible grid task: {params.to_dict()}")
        super().__init__(params, scheme, cap, jit)
        self.grid = np.full((int(round(params.width)), int(round(params.height))), -1,
                            dtype=np.int64)

    def default_cap(self) -> int:
        return LF_EPISODE_CAP

    def obs_dim(self) -> int:
        return K.LF_OBS_DIM

    def _place(self, rng: np.random.Generator) -> None:
        self.grid, self.agent = place_grid(self.params, rng)

    def _observe(self, out: np.ndarray) -> None:
        self._kern["lf_observe"](self.grid, self.agent, self.inv[0], self.inv[1], out)

    def _step_kernel(self, action: int) -> tuple[float, bool, bool]:
        return self._kern["lf_step"](
            self.grid, self.agent, self.inv, self.progress, action, self._goal, self._rewards
        )

    def layout_dict(self) -> dict:
        objects = []
        for x in range(self.grid.shape[0]):
            for y in range(self.grid.shape[1]):
                if self.grid[x, y] >= 0:
                    objects.append({"kind": KIND_NAMES[int(self.grid[x, y])],
                                    "x": x, "y": y})
        return {
            "fidelity": self.fidelity,
            "width": self.grid.shape[0],
            "height": self.grid.shape[1],
            "agent": [float(self.agent[0]), float(self.agent[1]), float(self.agent[2])],
            "objects": objects,
        }
