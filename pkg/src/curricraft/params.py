"""Task parameterization: goal specs, parametric task vectors, feasibility, sampling.

A task in either fidelity is identified by the same parametric variables:
arena width/height, object counts (trees, rocks, crafting tables, fires),
starting inventory (wood, stone) and a goal condition. Source tasks for a
curriculum are generated by sampling these variables inside declared ranges,
subject to the minimum requirements of the chosen goal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

from .errors import InfeasibleRanges, ValidationError

# Object taxonomy. Fire is an obstacle kind, never a navigation target.
ITEM_KINDS = ("tree", "rock", "crafting_table")

GOAL_NAVIGATE = "navigate"
GOAL_BREAK = "break"
GOAL_CRAFT = "craft"

# Stone axe recipe: 2 wood + 1 stone, crafted at a table.
RECIPE_WOOD = 2
RECIPE_STONE = 1

# Disc radius (meters) used for objects and the agent in the continuous arena.
OBJECT_RADIUS = 0.15

# Order of the numeric parameter vector used by the affine mapping.
NUMERIC_FIELDS = (
    "width",
    "height",
    "trees_env",
    "rocks_env",
    "crafting_tables",
    "wood_inv",
    "stone_inv",
    "fires_env",
)
# Indices of count-valued entries (everything except the two dimensions).
COUNT_INDICES = tuple(range(2, len(NUMERIC_FIELDS)))

LF = "lf"
HF = "hf"


@dataclass(frozen=True)
class GoalSpec:
    """Terminal objective of a task.

    kind is one of "navigate" (reach an item of `item` kind), "break"
    (break at least `trees` trees and `rocks` rocks) or "craft" (craft the
    stone axe).
    """

    kind: str
    item: str | None = None
    trees: int = 0
    rocks: int = 0

    def __post_init__(self) -> None:
        if self.kind == GOAL_NAVIGATE:
            if self.item not in ITEM_KINDS:
                raise ValidationError(f"navigate goal needs item in {ITEM_KINDS}, got {self.item!r}")
        elif self.kind == GOAL_BREAK:
            if self.trees < 0 or self.rocks < 0 or (self.trees == 0 and self.rocks == 0):
                raise ValidationError("break goal needs non-negative counts, not both zero")
        elif self.kind == GOAL_CRAFT:
            if self.item is not None or self.trees or self.rocks:
                raise ValidationError("craft goal takes no arguments")
        else:
            raise ValidationError(f"unknown goal kind {self.kind!r}")

    @classmethod
    def navigate(cls, item: str) -> "GoalSpec":
        return cls(GOAL_NAVIGATE, item=item)

    @classmethod
    def break_items(cls, trees: int = 0, rocks: int = 0) -> "GoalSpec":
        return cls(GOAL_BREAK, trees=trees, rocks=rocks)

    @classmethod
    def craft(cls) -> "GoalSpec":
        return cls(GOAL_CRAFT)

    @property
    def category(self) -> str:
        return self.kind

    def to_dict(self) -> dict:
        if self.kind == GOAL_NAVIGATE:
            return {"kind": "navigate", "item": self.item}
        if self.kind == GOAL_BREAK:
            return {"kind": "break", "trees": self.trees, "rocks": self.rocks}
        return {"kind": "craft"}

    @classmethod
    def from_dict(cls, d: dict) -> "GoalSpec":
        kind = d.get("kind")
        if kind == "navigate":
            return cls.navigate(d["item"])
        if kind == "break":
            return cls.break_items(int(d.get("trees", 0)), int(d.get("rocks", 0)))
        if kind == "craft":
            return cls.craft()
        raise ValidationError(f"goal dict has unknown kind {kind!r}")

    def sort_key(self) -> tuple:
        return (self.kind, self.item or "", self.trees, self.rocks)


@dataclass(frozen=True)
class TaskParams:
    """Parametric variables identifying one task.

    width/height are grid cells in the low-fidelity environment and meters
    in the high-fidelity one; all other numeric fields are counts.
    """

    width: float
    height: float
    trees_env: int
    rocks_env: int
    crafting_tables: int
    wood_inv: int
    stone_inv: int
    fires_env: int
    goal: GoalSpec

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("width and height must be positive")
        for name in NUMERIC_FIELDS[2:]:
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if self.crafting_tables not in (0, 1):
            raise ValidationError("crafting_tables must be 0 or 1")

    def numeric_vector(self) -> np.ndarray:
        return np.array([float(getattr(self, f)) for f in NUMERIC_FIELDS], dtype=np.float64)

    @classmethod
    def from_numeric(cls, vec: np.ndarray, goal: GoalSpec) -> "TaskParams":
        vals = {f: vec[i] for i, f in enumerate(NUMERIC_FIELDS)}
        return cls(
            width=float(vals["width"]),
            height=float(vals["height"]),
            trees_env=int(vals["trees_env"]),
            rocks_env=int(vals["rocks_env"]),
            crafting_tables=int(vals["crafting_tables"]),
            wood_inv=int(vals["wood_inv"]),
            stone_inv=int(vals["stone_inv"]),
            fires_env=int(vals["fires_env"]),
            goal=goal,
        )

    @property
    def object_count(self) -> int:
        return self.trees_env + self.rocks_env + self.crafting_tables + self.fires_env

    def with_goal(self, goal: GoalSpec) -> "TaskParams":
        return replace(self, goal=goal)

    def to_dict(self) -> dict:
        d = {f: getattr(self, f) for f in NUMERIC_FIELDS}
        d["goal"] = self.goal.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TaskParams":
        missing = [f for f in NUMERIC_FIELDS if f not in d]
        if missing or "goal" not in d:
            raise ValidationError(f"task dict missing fields: {missing + (['goal'] if 'goal' not in d else [])}")
        return cls(
            width=float(d["width"]),
            height=float(d["height"]),
            trees_env=int(d["trees_env"]),
            rocks_env=int(d["rocks_env"]),
            crafting_tables=int(d["crafting_tables"]),
            wood_inv=int(d["wood_inv"]),
            stone_inv=int(d["stone_inv"]),
            fires_env=int(d["fires_env"]),
            goal=GoalSpec.from_dict(d["goal"]),
        )

    def sort_key(self) -> tuple:
        return tuple(float(getattr(self, f)) for f in NUMERIC_FIELDS) + self.goal.sort_key()


@dataclass(frozen=True)
class ParamRanges:
    """Inclusive [lo, hi] sampling bounds per numeric parameter.

    Dimensions are sampled as integers in the low-fidelity grid; counts are
    integers in both fidelities.
    """

    width: tuple[float, float]
    height: tuple[float, float]
    trees_env: tuple[int, int]
    rocks_env: tuple[int, int]
    crafting_tables: tuple[int, int]
    wood_inv: tuple[int, int]
    stone_inv: tuple[int, int]
    fires_env: tuple[int, int]

    def __post_init__(self) -> None:
        for name in NUMERIC_FIELDS:
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValidationError(f"ranges.{name}: min {lo} > max {hi}")

    def bounds(self, name: str) -> tuple[float, float]:
        return getattr(self, name)

    def iter_bounds(self) -> Iterator[tuple[str, tuple[float, float]]]:
        for name in NUMERIC_FIELDS:
            yield name, getattr(self, name)

    def contains(self, p: TaskParams) -> bool:
        return all(lo <= getattr(p, name) <= hi for name, (lo, hi) in self.iter_bounds())

    def to_dict(self) -> dict:
        return {name: list(getattr(self, name)) for name in NUMERIC_FIELDS}

    @classmethod
    def from_dict(cls, d: dict) -> "ParamRanges":
        kwargs = {}
        for name in NUMERIC_FIELDS:
            if name not in d:
                raise ValidationError(f"ranges dict missing {name}")
            lo, hi = d[name]
            kwargs[name] = (lo, hi)
        return cls(**kwargs)


def goal_categories() -> list[str]:
    """The goal categories a curriculum must cover, in canonical order."""
    return [GOAL_NAVIGATE, GOAL_BREAK, GOAL_CRAFT]


def default_ranges(variant: str = "plain") -> ParamRanges:
    """Sampling ranges for source tasks of the canonical 10x10 target.

    The target-task values sit at the top of each range so that source tasks
    are shrunken variants. Fires are only sampled in the fire variant.
    """
    return ParamRanges(
        width=(4, 10),
        height=(4, 10),
        trees_env=(0, 4),
        rocks_env=(0, 2),
        crafting_tables=(0, 1),
        wood_inv=(0, 2),
        stone_inv=(0, 1),
        fires_env=(0, 2) if variant == "fire" else (0, 0),
    )


def target_task_params(variant: str = "plain", fire_count: int = 1) -> TaskParams:
    """Canonical low-fidelity target: 10x10 grid, 4 trees, 2 rocks, 1 table, craft goal."""
    return TaskParams(
        width=10,
        height=10,
        trees_env=4,
        rocks_env=2,
        crafting_tables=1,
        wood_inv=0,
        stone_inv=0,
        fires_env=fire_count if variant == "fire" else 0,
        goal=GoalSpec.craft(),
    )


def hf_target_params(variant: str = "plain", fire_count: int = 1) -> TaskParams:
    """Canonical high-fidelity target: 4m x 4m arena with the same objects."""
    return replace(target_task_params(variant, fire_count), width=4.0, height=4.0)


def _capacity_ok(p: TaskParams, fidelity: str) -> bool:
    if fidelity == LF:
        cells = int(round(p.width)) * int(round(p.height))
        return p.object_count + 1 <= cells
    # Continuous arena: total disc footprint (objects + agent) must fit, and
    # a single disc must fit between the walls at all.
    if min(p.width, p.height) < 2 * OBJECT_RADIUS:
        return False
    footprint = (p.object_count + 1) * math.pi * OBJECT_RADIUS**2
    return footprint < p.width * p.height


def _goal_ok(p: TaskParams) -> bool:
    g = p.goal
    if g.kind == GOAL_CRAFT:
        return (
            p.crafting_tables == 1
            and p.wood_inv + p.trees_env >= RECIPE_WOOD
            and p.stone_inv + p.rocks_env >= RECIPE_STONE
        )
    if g.kind == GOAL_BREAK:
        return p.trees_env >= g.trees and p.rocks_env >= g.rocks
    counts = {"tree": p.trees_env, "rock": p.rocks_env, "crafting_table": p.crafting_tables}
    return counts[g.item] >= 1


def feasible(p: TaskParams, fidelity: str = LF) -> bool:
    """True iff the goal is achievable and the objects fit in the arena.

    The capacity rule depends on fidelity: distinct grid cells in the
    low-fidelity environment, disc footprint area in the high-fidelity one.
    """
    return _goal_ok(p) and _capacity_ok(p, fidelity)


def _goal_minimums(goal: GoalSpec) -> dict[str, int]:
    """Per-parameter lower bounds implied by the goal."""
    mins = {name: 0 for name in NUMERIC_FIELDS[2:]}
    if goal.kind == GOAL_CRAFT:
        mins["crafting_tables"] = 1
    elif goal.kind == GOAL_BREAK:
        mins["trees_env"] = goal.trees
        mins["rocks_env"] = goal.rocks
    elif goal.kind == GOAL_NAVIGATE:
        field = {"tree": "trees_env", "rock": "rocks_env", "crafting_table": "crafting_tables"}[goal.item]
        mins[field] = 1
    return mins


_MAX_DRAWS = 1000


def _draw_int(rng: np.random.Generator, lo: int, hi: int) -> int:
    return int(rng.integers(lo, hi + 1))


def random_source_params(rng: np.random.Generator, ranges: ParamRanges, goal: GoalSpec) -> TaskParams:
    """Sample a feasible task with the given goal.

    Each numeric parameter is drawn uniformly from
    [max(range min, goal minimum), range max]; the draw is rejected and
    retried while the goal requirements or arena capacity fail.
    """
    mins = _goal_minimums(goal)
    for name, lower in mins.items():
        lo, hi = ranges.bounds(name)
        if lower > hi:
            raise InfeasibleRanges(f"goal needs {name} >= {lower} but range max is {hi}")

    for _ in range(_MAX_DRAWS):
        vals = {"width": _draw_int(rng, *map(int, ranges.width)),
                "height": _draw_int(rng, *map(int, ranges.height))}
        for name in NUMERIC_FIELDS[2:]:
            lo, hi = map(int, ranges.bounds(name))
            vals[name] = _draw_int(rng, max(lo, mins[name]), hi)
        p = TaskParams(goal=goal, **vals)
        if feasible(p, LF):
            return p
    raise InfeasibleRanges(f"no feasible draw for goal {goal} in {_MAX_DRAWS} attempts")


def sample_task(rng: np.random.Generator, ranges: ParamRanges, category: str) -> TaskParams:
    """Sample a feasible task whose goal belongs to the given category.

    Navigate picks a reachable item kind uniformly; break draws the required
    counts as a subset of the objects actually placed (at least one tree).
    """
    if category == GOAL_CRAFT:
        return random_source_params(rng, ranges, GoalSpec.craft())

    if category == GOAL_NAVIGATE:
        field_of = {"tree": "trees_env", "rock": "rocks_env", "crafting_table": "crafting_tables"}
        options = [k for k in ITEM_KINDS if ranges.bounds(field_of[k])[1] >= 1]
        if not options:
            raise InfeasibleRanges("no item kind available for a navigate goal")
        item = options[_draw_int(rng, 0, len(options) - 1)]
        return random_source_params(rng, ranges, GoalSpec.navigate(item))

    if category == GOAL_BREAK:
        lo_t, hi_t = map(int, ranges.trees_env)
        if hi_t < 1:
            raise InfeasibleRanges("break goal needs at least one tree in range")
        for _ in range(_MAX_DRAWS):
            vals = {"width": _draw_int(rng, *map(int, ranges.width)),
                    "height": _draw_int(rng, *map(int, ranges.height))}
            vals["trees_env"] = _draw_int(rng, max(lo_t, 1), hi_t)
            for name in ("rocks_env", "crafting_tables", "wood_inv", "stone_inv", "fires_env"):
                vals[name] = _draw_int(rng, *map(int, ranges.bounds(name)))
            goal = GoalSpec.break_items(
                trees=_draw_int(rng, 1, vals["trees_env"]),
                rocks=_draw_int(rng, 0, vals["rocks_env"]) if vals["rocks_env"] else 0,
            )
            p = TaskParams(goal=goal, **vals)
            if feasible(p, LF):
                return p
        raise InfeasibleRanges(f"no feasible break task in {_MAX_DRAWS} attempts")

    raise ValidationError(f"unknown goal category {category!r}")
