"""Beam-search curriculum construction and the cross-fidelity task pipeline.

The search runs entirely in the low-fidelity grid: level 1 samples branch_n
random source tasks, intermediate levels branch each kept node into children
whose goal category the node's lineage has not met yet, and the final level
is always the target task. Selection keeps the width_w cheapest nodes per
level; the returned curriculum is the root-to-leaf path with the fewest
cumulative episodes. Only task parameters ever cross to the high-fidelity
side; policies are chained within one fidelity and never across.

Node evaluation draws from per-node generators keyed by (seed, level, slot),
so results are independent of evaluation order and safe to parallelize.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import kernels as K
from .agents import AgentConfig, MlpParams, StopCriterion, learn
from .envs import make_env
from .envs.core import RewardScheme
from .errors import NoFeasibleGoal, ValidationError
from .mapping import AffineMap, NoiseModel
from .params import (
    GOAL_BREAK,
    GOAL_CRAFT,
    HF,
    LF,
    InfeasibleRanges,
    ParamRanges,
    TaskParams,
    default_ranges,
    feasible,
    goal_categories,
    sample_task,
)

MODE_AC = "ac"
MODE_HC = "hc"
MODE_SCRATCH = "scratch"
MODES = (MODE_AC, MODE_HC, MODE_SCRATCH)

MANIFEST_SCHEMA = "curriculum-manifest"
MANIFEST_VERSION = 1

# Sub-stream tags under the master seed; fixed so that adding streams later
# cannot silently renumber existing ones.
_STREAM_LF_INIT = 0
_STREAM_NODE = 1
_STREAM_HF_INIT = 2
_STREAM_HF_TASK = 3
_STREAM_MAP_NOISE = 4


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


@dataclass(frozen=True)
class BeamConfig:
    """Search shape: beam width, branching factor, curriculum length."""

    width_w: int = 4
    branch_n: int = 20
    length_u: int = 4

    def __post_init__(self) -> None:
        if self.width_w < 1 or self.branch_n < 1:
            raise ValidationError("width_w and branch_n must be >= 1")
        if self.length_u < len(goal_categories()):
            raise ValidationError(
                f"length_u must be >= {len(goal_categories())} so every goal "
                "category fits in the curriculum"
            )


@dataclass
class BeamNode:
    """One evaluated task in the search tree."""

    params: TaskParams
    policy: MlpParams
    episodes_used: int
    timesteps_used: int
    categories_seen: frozenset
    level: int
    index: int
    parent: "BeamNode | None" = None

    def path(self) -> list["BeamNode"]:
        chain: list[BeamNode] = []
        node: BeamNode | None = self
        while node is not None:
            chain.append(node)
            node = node.parent
        return chain[::-1]

    @property
    def cumulative_episodes(self) -> int:
        return sum(n.episodes_used for n in self.path())

    @property
    def cumulative_timesteps(self) -> int:
        return sum(n.timesteps_used for n in self.path())


@dataclass(frozen=True)
class CurriculumResult:
    """Ordered task sequence plus what it cost to find it.

    episodes/timesteps are the winning path's per-task learning costs;
    the totals count every node the search evaluated (the sunk cost).
    Handcrafted sequences carry zero costs.
    """

    tasks: tuple[TaskParams, ...]
    episodes: tuple[int, ...]
    timesteps: tuple[int, ...]
    total_lf_episodes: int
    total_lf_timesteps: int
    search_log: tuple[dict, ...] = ()

    def __post_init__(self) -> None:
        if not self.tasks:
            raise ValidationError("a curriculum needs at least one task")
        if not (len(self.tasks) == len(self.episodes) == len(self.timesteps)):
            raise ValidationError("per-task cost lists must match the task list")
        if self.tasks[-1].goal.kind != GOAL_CRAFT:
            raise ValidationError("the final task must carry the craft goal")
        if len(self.tasks) > 1:
            seen = {t.goal.kind for t in self.tasks}
            missing = [c for c in goal_categories() if c not in seen]
            if missing:
                raise ValidationError(f"curriculum never visits categories {missing}")

    def to_dict(self) -> dict:
        return {
            "tasks": [t.to_dict() for t in self.tasks],
            "episodes": list(self.episodes),
            "timesteps": list(self.timesteps),
            "total_lf_episodes": self.total_lf_episodes,
            "total_lf_timesteps": self.total_lf_timesteps,
        }


def best_candidates(nodes: list[BeamNode], width_w: int) -> list[BeamNode]:
    """The width_w cheapest nodes, under a total deterministic order."""
    if not nodes:
        raise ValidationError("cannot select from an empty candidate set")
    ranked = sorted(nodes, key=lambda n: (n.episodes_used, n.timesteps_used,
                                          n.params.sort_key(), n.index))
    return ranked[: min(width_w, len(ranked))]


def _valid_categories(seen: frozenset, level: int, length_u: int) -> list[str]:
    """Categories this level may take without making coverage impossible.

    Craft is guaranteed by the forced final level, so only the other
    categories must fit into the remaining intermediate slots.
    """
    cats = goal_categories()
    unseen = [c for c in cats if c not in seen]
    pool = unseen if unseen else [GOAL_BREAK]
    slots_after = (length_u - 1) - level
    must_cover = {c for c in cats if c not in seen and c != GOAL_CRAFT}
    return [c for c in pool if len(must_cover - {c}) <= slots_after]


# Hook implementations are plain classes rather than closures so candidate
# evaluations can be shipped to worker processes.
@dataclass(frozen=True)
class _DefaultInitSrc:
    ranges: ParamRanges
    length_u: int

    def __call__(self, rng: np.random.Generator,
                 slot: tuple[int, int, int]) -> TaskParams:
        cats = _valid_categories(frozenset(), 1, self.length_u)
        cat = cats[int(rng.integers(len(cats)))]
        return sample_task(rng, self.ranges, cat)


@dataclass(frozen=True)
class _DefaultInitInter:
    ranges: ParamRanges
    length_u: int

    def __call__(self, rng: np.random.Generator, seen: frozenset,
                 slot: tuple[int, int, int]) -> TaskParams:
        level = slot[0]
        cats = _valid_categories(seen, level, self.length_u)
        while cats:
            cat = cats[int(rng.integers(len(cats)))]
            try:
                return sample_task(rng, self.ranges, cat)
            except InfeasibleRanges:
                cats.remove(cat)
        raise NoFeasibleGoal(f"no unencountered feasible goal beyond {sorted(seen)}")


@dataclass(frozen=True)
class _DefaultEvaluate:
    lf_target: TaskParams
    stop: StopCriterion
    agent_cfg: AgentConfig
    jit: bool | None

    def __call__(self, task: TaskParams, policy: MlpParams,
                 rng: np.random.Generator):
        scheme = RewardScheme(shaping_enabled=(task != self.lf_target))
        env = make_env(LF, task, scheme, jit=self.jit)
        res = learn(env, policy, self.stop, rng, cfg=self.agent_cfg, jit=self.jit)
        return res.episodes_used, res.timesteps_used, res.final_policy


def default_init_src(lf_target: TaskParams, ranges: ParamRanges, length_u: int):
    """Random source-task generator for level 1."""
    return _DefaultInitSrc(ranges, length_u)


def default_init_inter(lf_target: TaskParams, ranges: ParamRanges, length_u: int):
    """Successor-task generator: draws a goal the lineage has not met."""
    return _DefaultInitInter(ranges, length_u)


def default_evaluate(lf_target: TaskParams, stop: StopCriterion,
                     agent_cfg: AgentConfig | None, jit: bool | None):
    """Learn one grid task; shaping is on everywhere except the target itself."""
    return _DefaultEvaluate(lf_target, stop, agent_cfg or AgentConfig(), jit)


def _call_evaluate(args):
    evaluate, task, policy, rng = args
    return evaluate(task, policy, rng)


def generate_ac(
    lf_target: TaskParams,
    cfg: BeamConfig,
    stop: StopCriterion,
    ranges: ParamRanges | None = None,
    seed: int = 0,
    agent_cfg: AgentConfig | None = None,
    jit: bool | None = None,
    init_src: Callable | None = None,
    init_inter: Callable | None = None,
    evaluate: Callable | None = None,
    pool_map: Callable | None = None,
) -> CurriculumResult:
    """Beam-search a task curriculum that ends at the grid target.

    The three hooks default to random task sampling and grid learning; tests
    inject deterministic stand-ins to compare against exhaustive search.
    pool_map (an order-preserving map) fans candidate evaluations out to
    workers; every node owns its rng stream, so the schedule cannot leak
    into the results.
    """
    if not feasible(lf_target, LF):
        raise ValidationError(f"infeasible target task: {lf_target.to_dict()}")
    ranges = ranges or default_ranges("fire" if lf_target.fires_env else "plain")
    init_src = init_src or default_init_src(lf_target, ranges, cfg.length_u)
    init_inter = init_inter or default_init_inter(lf_target, ranges, cfg.length_u)
    evaluate = evaluate or default_evaluate(lf_target, stop, agent_cfg, jit)
    map_fn = pool_map if pool_map is not None else map

    hidden = (agent_cfg or AgentConfig()).hidden
    init_policy = MlpParams.init(_rng(seed, _STREAM_LF_INIT), K.LF_OBS_DIM, hidden)

    total_episodes = 0
    total_timesteps = 0
    search_log: list[dict] = []
    next_index = 0

    kept: list[BeamNode] = []
    for level in range(1, cfg.length_u + 1):
        # pick every candidate task first, then evaluate the batch
        pending: list[tuple[TaskParams, MlpParams, BeamNode | None,
                            np.random.Generator]] = []
        if level == 1:
            for n in range(cfg.branch_n):
                rng = _rng(seed, _STREAM_NODE, level, 0, n)
                task = init_src(rng, (level, 0, n))
                pending.append((task, init_policy, None, rng))
        elif level < cfg.length_u:
            for w, parent in enumerate(kept):
                for n in range(cfg.branch_n):
                    rng = _rng(seed, _STREAM_NODE, level, w, n)
                    try:
                        task = init_inter(rng, parent.categories_seen, (level, w, n))
                    except NoFeasibleGoal:
                        task = lf_target
                    pending.append((task, parent.policy, parent, rng))
        else:
            for w, parent in enumerate(kept):
                rng = _rng(seed, _STREAM_NODE, level, w, 0)
                pending.append((lf_target, parent.policy, parent, rng))

        results = list(map_fn(
            _call_evaluate,
            [(evaluate, task, pol, rng) for task, pol, _, rng in pending],
        ))
        candidates: list[BeamNode] = []
        for (task, _, parent, _), (episodes, timesteps, final) in zip(pending, results):
            seen = parent.categories_seen if parent else frozenset()
            node = BeamNode(
                params=task, policy=final, episodes_used=int(episodes),
                timesteps_used=int(timesteps),
                categories_seen=seen | {task.goal.kind},
                level=level, index=next_index, parent=parent,
            )
            next_index += 1
            total_episodes += node.episodes_used
            total_timesteps += node.timesteps_used
            candidates.append(node)
        kept = best_candidates(candidates, cfg.width_w)
        search_log.append({
            "level": level,
            "evaluated": [
                {"index": c.index, "episodes": c.episodes_used,
                 "timesteps": c.timesteps_used, "task": c.params.to_dict()}
                for c in candidates
            ],
            "kept": [c.index for c in kept],
        })

    leaf = min(kept, key=lambda n: (n.cumulative_episodes,
                                    n.cumulative_timesteps, n.index))
    path = leaf.path()
    return CurriculumResult(
        tasks=tuple(n.params for n in path),
        episodes=tuple(n.episodes_used for n in path),
        timesteps=tuple(n.timesteps_used for n in path),
        total_lf_episodes=total_episodes,
        total_lf_timesteps=total_timesteps,
        search_log=tuple(search_log),
    )


def load_hc(path: str | Path, lf_target: TaskParams) -> CurriculumResult:
    """Read an expert-authored task sequence; costs are zero by definition."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"handcrafted curriculum file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"unparseable curriculum file {path}: {exc}") from exc
    entries = doc.get("tasks") if isinstance(doc, dict) else doc
    if not isinstance(entries, list) or not entries:
        raise ValidationError(f"{path}: expected a non-empty 'tasks' list")

    tasks = []
    for i, entry in enumerate(entries):
        raw = entry.get("lf", entry) if isinstance(entry, dict) else entry
        try:
            task = TaskParams.from_dict(raw)
        except (KeyError, TypeError, ValidationError) as exc:
            raise ValidationError(f"{path}: entry {i} is malformed: {exc}") from exc
        if not feasible(task, LF):
            raise ValidationError(f"{path}: entry {i} is infeasible: {raw}")
        tasks.append(task)
    if tasks[-1] != lf_target:
        raise ValidationError(
            f"{path}: last entry must equal the grid target {lf_target.to_dict()}"
        )
    zeros = (0,) * len(tasks)
    return CurriculumResult(tasks=tuple(tasks), episodes=zeros, timesteps=zeros,
                            total_lf_episodes=0, total_lf_timesteps=0)


@dataclass
class TaskRunLog:
    """Per-episode record of one learned task in the chained sequence."""

    lf_task: TaskParams
    hf_task: TaskParams
    shaping: bool
    episodes: int
    timesteps: int
    converged: bool
    returns: list[float] = field(default_factory=list)
    successes: list[bool] = field(default_factory=list)
    lengths: list[int] = field(default_factory=list)


@dataclass
class RunLogs:
    """Everything one pipeline run produced, for metrics and manifests."""

    mode: str
    seed: int
    curriculum: CurriculumResult
    hf_logs: list[TaskRunLog]
    map_coefficients: dict
    noisy: bool

    @property
    def lf_sunk_timesteps(self) -> int:
        return self.curriculum.total_lf_timesteps

    @property
    def hf_source_timesteps(self) -> int:
        return sum(t.timesteps for t in self.hf_logs[:-1])

    @property
    def target_log(self) -> TaskRunLog:
        return self.hf_logs[-1]


def run_acute(
    hf_target: TaskParams,
    amap: AffineMap,
    noise: NoiseModel | None,
    cfg: BeamConfig,
    stop_lf: StopCriterion,
    stop_hf: StopCriterion,
    mode: str,
    seed: int = 0,
    ranges: ParamRanges | None = None,
    agent_cfg_lf: AgentConfig | None = None,
    agent_cfg_hf: AgentConfig | None = None,
    agent_cfg_hf_target: AgentConfig | None = None,
    hc_path: str | Path | None = None,
    jit: bool | None = None,
    curriculum: CurriculumResult | None = None,
    pool_map: Callable | None = None,
) -> tuple[MlpParams, RunLogs]:
    """Full pipeline: find a curriculum in the grid, learn it in the arena.

    The arena policy starts fresh; only task parameters cross fidelities.
    Sources keep the break-bonus shaping, the target drops it. Under a noisy
    map, sources get perturbed images while the final task stays the exact
    target so every mode trains the same task in the end. The final task may
    train under its own agent config (same hidden size; typically a smaller
    step size, since the unshaped target starts from a policy worth keeping).
    A precomputed curriculum (from an earlier search with the same seed)
    skips the grid phase; the arena phase is unchanged because its rng
    streams are keyed apart from the search's.
    """
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")
    if not feasible(hf_target, HF):
        raise ValidationError(f"infeasible arena target: {hf_target.to_dict()}")
    lf_target = amap.inverse(hf_target)
    if not feasible(lf_target, LF):
        raise ValidationError(
            f"inverse-mapped grid target is infeasible: {lf_target.to_dict()}"
        )

    if curriculum is not None:
        if mode == MODE_SCRATCH:
            raise ValidationError("scratch mode does not take a curriculum")
        if curriculum.tasks[-1] != lf_target:
            raise ValidationError(
                "precomputed curriculum ends at a different target than "
                f"{lf_target.to_dict()}"
            )
    elif mode == MODE_AC:
        curriculum = generate_ac(lf_target, cfg, stop_lf, ranges, seed,
                                 agent_cfg_lf, jit, pool_map=pool_map)
    elif mode == MODE_HC:
        if hc_path is None:
            raise ValidationError("hc mode needs a curriculum file path")
        curriculum = load_hc(hc_path, lf_target)
    else:
        curriculum = CurriculumResult(tasks=(lf_target,), episodes=(0,),
                                      timesteps=(0,), total_lf_episodes=0,
                                      total_lf_timesteps=0)

    noise_rng = _rng(seed, _STREAM_MAP_NOISE)
    hf_tasks: list[TaskParams] = []
    last = len(curriculum.tasks) - 1
    for i, lf_task in enumerate(curriculum.tasks):
        if i == last:
            hf_task = hf_target
        elif noise is not None:
            hf_task = amap.forward_noisy(lf_task, noise_rng, noise)
        else:
            hf_task = amap.forward(lf_task)
        if not feasible(hf_task, HF):
            raise ValidationError(
                f"mapped arena task {i} is infeasible: {hf_task.to_dict()}"
            )
        hf_tasks.append(hf_task)

    agent_cfg_hf = agent_cfg_hf or AgentConfig()
    agent_cfg_hf_target = agent_cfg_hf_target or agent_cfg_hf
    if agent_cfg_hf_target.hidden != agent_cfg_hf.hidden:
        raise ValidationError(
            "target agent config must keep the source hidden size "
            f"({agent_cfg_hf_target.hidden} != {agent_cfg_hf.hidden})")
    policy = MlpParams.init(_rng(seed, _STREAM_HF_INIT), K.HF_OBS_DIM,
                            agent_cfg_hf.hidden)
    logs: list[TaskRunLog] = []
    for i, hf_task in enumerate(hf_tasks):
        shaping = i != last
        task_cfg = agent_cfg_hf_target if i == last else agent_cfg_hf
        env = make_env(HF, hf_task, RewardScheme(shaping_enabled=shaping), jit=jit)
        res = learn(env, policy, stop_hf, _rng(seed, _STREAM_HF_TASK, i),
                    cfg=task_cfg, jit=jit)
        policy = res.final_policy
        logs.append(TaskRunLog(
            lf_task=curriculum.tasks[i], hf_task=hf_task, shaping=shaping,
            episodes=res.episodes_used, timesteps=res.timesteps_used,
            converged=res.converged, returns=res.return_history,
            successes=res.success_history, lengths=res.episode_lengths,
        ))

    run = RunLogs(mode=mode, seed=seed, curriculum=curriculum, hf_logs=logs,
                  map_coefficients=amap.to_dict(), noisy=noise is not None)
    return policy, run


def curriculum_manifest(run: RunLogs, extra: dict | None = None) -> dict:
    """JSON document describing the task sequence and its costs."""
    doc = {
        "schema": MANIFEST_SCHEMA,
        "version": MANIFEST_VERSION,
        "mode": run.mode,
        "seed": run.seed,
        "map": run.map_coefficients,
        "noisy": run.noisy,
        "lf_total_episodes": run.curriculum.total_lf_episodes,
        "lf_total_timesteps": run.curriculum.total_lf_timesteps,
        "tasks": [
            {
                "lf": log.lf_task.to_dict(),
                "hf": log.hf_task.to_dict(),
                "shaping": log.shaping,
                "lf_episodes": int(run.curriculum.episodes[i]),
                "lf_timesteps": int(run.curriculum.timesteps[i]),
                "hf_episodes": log.episodes,
                "hf_timesteps": log.timesteps,
                "hf_converged": log.converged,
            }
            for i, log in enumerate(run.hf_logs)
        ],
    }
    if extra:
        doc.update(extra)
    return doc
