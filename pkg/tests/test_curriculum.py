"""Beam-search behavior against exhaustive enumeration, plus pipeline wiring."""

import itertools
import json

import numpy as np
import pytest

from curricraft.agents import AgentConfig, MlpParams, StopCriterion
from curricraft.curriculum import (
    BeamConfig,
    BeamNode,
    CurriculumResult,
    best_candidates,
    curriculum_manifest,
    default_init_inter,
    generate_ac,
    load_hc,
    run_acute,
)
from curricraft.errors import NoFeasibleGoal, ValidationError
from curricraft.mapping import AffineMap, NoiseModel
from curricraft.params import (
    GoalSpec,
    ParamRanges,
    TaskParams,
    default_ranges,
    feasible,
    goal_categories,
)

STOP = StopCriterion(delta_g=0.85, window_s=3, budget_b=5)
FAST = AgentConfig(hidden=8)


def node(episodes, timesteps=0, index=0, task=None, level=1):
    task = task or TaskParams(4, 4, 1, 0, 0, 0, 0, 0, goal=GoalSpec.navigate("tree"))
    pol = MlpParams(np.zeros((1, 1)), np.zeros(1), np.zeros((1, 5)), np.zeros(5))
    return BeamNode(params=task, policy=pol, episodes_used=episodes,
                    timesteps_used=timesteps, categories_seen=frozenset(),
                    level=level, index=index)


# ---------------------------------------------------------------------------
# Config and selection
# ---------------------------------------------------------------------------

def test_beam_config_validation():
    with pytest.raises(ValidationError):
        BeamConfig(width_w=0)
    with pytest.raises(ValidationError):
        BeamConfig(branch_n=0)
    with pytest.raises(ValidationError):
        BeamConfig(length_u=2)  # three goal categories exist
    BeamConfig(width_w=4, branch_n=20, length_u=4)


def test_best_candidates_keeps_the_cheapest():
    nodes = [node(120, index=0), node(80, index=1), node(200, index=2),
             node(80, index=3)]
    kept = best_candidates(nodes, 2)
    assert [n.episodes_used for n in kept] == [80, 80]
    assert [n.index for n in kept] == [1, 3]  # equal cost: creation order


def test_best_candidates_with_wide_beam_returns_all_sorted():
    nodes = [node(3, index=0), node(1, index=1), node(2, index=2)]
    kept = best_candidates(nodes, 99)
    assert [n.episodes_used for n in kept] == [1, 2, 3]


def test_best_candidates_tie_breaks_on_timesteps_then_params():
    a = node(10, timesteps=500, index=0)
    b = node(10, timesteps=100, index=1)
    assert best_candidates([a, b], 1)[0] is b
    small = TaskParams(4, 4, 1, 0, 0, 0, 0, 0, goal=GoalSpec.navigate("tree"))
    big = TaskParams(9, 9, 1, 0, 0, 0, 0, 0, goal=GoalSpec.navigate("tree"))
    c = node(10, timesteps=100, index=0, task=big)
    d = node(10, timesteps=100, index=1, task=small)
    assert best_candidates([c, d], 1)[0] is d


def test_best_candidates_rejects_empty():
    with pytest.raises(ValidationError):
        best_candidates([], 2)


def test_best_candidates_selection_invariant():
    rng = np.random.default_rng(0)
    nodes = [node(int(e), index=i) for i, e in enumerate(rng.integers(0, 50, 30))]
    kept = best_candidates(nodes, 7)
    excluded = [n for n in nodes if all(n is not k for k in kept)]
    assert max(n.episodes_used for n in kept) <= min(n.episodes_used for n in excluded)


def test_curriculum_result_validation():
    nav = TaskParams(4, 4, 1, 0, 0, 0, 0, 0, goal=GoalSpec.navigate("tree"))
    craft = TaskParams(5, 5, 2, 1, 1, 0, 0, 0, goal=GoalSpec.craft())
    with pytest.raises(ValidationError):
        CurriculumResult(tasks=(), episodes=(), timesteps=(),
                         total_lf_episodes=0, total_lf_timesteps=0)
    with pytest.raises(ValidationError):  # last task must craft
        CurriculumResult(tasks=(craft, nav), episodes=(1, 1), timesteps=(1, 1),
                         total_lf_episodes=2, total_lf_timesteps=2)
    with pytest.raises(ValidationError):  # never breaks anything
        CurriculumResult(tasks=(nav, craft), episodes=(1, 1), timesteps=(1, 1),
                         total_lf_episodes=2, total_lf_timesteps=2)


# ---------------------------------------------------------------------------
# Synthetic search domain: lineage-dependent deterministic costs
# ---------------------------------------------------------------------------

NAV1 = TaskParams(4, 4, 1, 0, 0, 0, 0, 0, goal=GoalSpec.navigate("tree"))
NAV2 = TaskParams(5, 4, 1, 0, 0, 0, 0, 0, goal=GoalSpec.navigate("tree"))
BRK1 = TaskParams(4, 4, 1, 1, 0, 0, 0, 0, goal=GoalSpec.break_items(1, 0))
BRK2 = TaskParams(5, 5, 2, 0, 0, 0, 0, 0, goal=GoalSpec.break_items(2, 0))
TARGET = TaskParams(6, 6, 3, 1, 1, 0, 0, 0, goal=GoalSpec.craft())

POOL = {"navigate": [NAV1, NAV2], "break": [BRK1, BRK2]}
CODE = {NAV1: 1, NAV2: 2, BRK1: 3, BRK2: 4, TARGET: 5}

# (parent code, task) -> episodes; the cheap root leads into expensive
# children so a width-1 beam gets trapped while exhaustive search does not.
COSTS = {
    (0, NAV1): 30, (0, NAV2): 10, (0, BRK1): 60, (0, BRK2): 70,
    (1, BRK1): 5, (1, BRK2): 50,
    (2, BRK1): 40, (2, BRK2): 45,
    (3, NAV1): 35, (3, NAV2): 38,
    (4, NAV1): 36, (4, NAV2): 39,
}
for t, c in list(CODE.items()):
    COSTS[(c, TARGET)] = 25

U = 3


def synthetic_hooks():
    def categories_for(seen):
        cats = [c for c in goal_categories() if c != "craft"]
        return [c for c in cats if c not in seen]

    def combos(seen):
        return [(c, t) for c in categories_for(seen) for t in POOL[c]]

    def init_src(rng, slot):
        options = combos(frozenset())
        return options[slot[2] % len(options)][1]

    def init_inter(rng, seen, slot):
        options = combos(seen)
        if not options:
            raise NoFeasibleGoal("exhausted")
        return options[slot[2] % len(options)][1]

    def evaluate(task, policy, rng):
        parent = int(round(float(policy.b2[0])))
        cost = COSTS[(parent, task)]
        marker = MlpParams(np.zeros((1, 1)), np.zeros(1), np.zeros((1, 5)),
                           np.array([float(CODE[task]), 0, 0, 0, 0]))
        return cost, cost, marker

    return init_src, init_inter, evaluate


def brute_force_optimum():
    best = None
    for first in POOL["navigate"] + POOL["break"]:
        second_pool = POOL["break"] if first.goal.kind == "navigate" else POOL["navigate"]
        for second in second_pool:
            total = (COSTS[(0, first)] + COSTS[(CODE[first], second)]
                     + COSTS[(CODE[second], TARGET)])
            if best is None or total < best[0]:
                best = (total, (first, second, TARGET))
    return best


def _generate(width, branch):
    init_src, init_inter, evaluate = synthetic_hooks()
    return generate_ac(
        TARGET, BeamConfig(width_w=width, branch_n=branch, length_u=U), STOP,
        seed=0, init_src=init_src, init_inter=init_inter, evaluate=evaluate,
    )


def test_exhaustive_beam_matches_brute_force():
    optimum, best_path = brute_force_optimum()
    result = _generate(width=16, branch=4)
    assert sum(result.episodes) == optimum
    assert result.tasks == best_path
    assert len(result.tasks) == U and result.tasks[-1] == TARGET


def test_greedy_beam_never_beats_brute_force():
    optimum, _ = brute_force_optimum()
    result = _generate(width=1, branch=4)
    assert sum(result.episodes) >= optimum
    assert sum(result.episodes) == 10 + 40 + 25  # trapped by the cheap root


def test_selection_invariant_holds_at_every_level():
    result = _generate(width=2, branch=4)
    for entry in result.search_log:
        kept = set(entry["kept"])
        kept_eps = [c["episodes"] for c in entry["evaluated"] if c["index"] in kept]
        out_eps = [c["episodes"] for c in entry["evaluated"] if c["index"] not in kept]
        if out_eps:
            assert max(kept_eps) <= min(out_eps)


def test_sunk_cost_counts_every_evaluated_node():
    result = _generate(width=16, branch=4)
    logged = sum(c["episodes"] for lvl in result.search_log for c in lvl["evaluated"])
    assert result.total_lf_episodes == logged
    assert result.total_lf_timesteps == logged  # synthetic evaluate: same value


def test_synthetic_search_is_deterministic():
    a = _generate(width=2, branch=4)
    b = _generate(width=2, branch=4)
    assert a == b


def test_warm_start_lineage_reaches_children():
    # the child's evaluation must see its parent's marker, not the root init
    seen_parents = []
    init_src, init_inter, _ = synthetic_hooks()

    def evaluate(task, policy, rng):
        parent = int(round(float(policy.b2[0])))
        seen_parents.append((parent, CODE[task]))
        marker = MlpParams(np.zeros((1, 1)), np.zeros(1), np.zeros((1, 5)),
                           np.array([float(CODE[task]), 0, 0, 0, 0]))
        return COSTS[(parent, task)], 1, marker

    generate_ac(TARGET, BeamConfig(width_w=1, branch_n=4, length_u=U), STOP,
                seed=0, init_src=init_src, init_inter=init_inter,
                evaluate=evaluate)
    roots = [p for p, _ in seen_parents[:4]]
    assert roots == [0, 0, 0, 0]
    # greedy keeps NAV2 (code 2); all level-2 children then carry parent 2
    mids = seen_parents[4:8]
    assert all(p == 2 for p, _ in mids)
    assert seen_parents[-1][1] == CODE[TARGET]


# ---------------------------------------------------------------------------
# Real (learning) search at a tiny scale
# ---------------------------------------------------------------------------

LF_TARGET_SMALL = TaskParams(4, 4, 2, 1, 1, 0, 0, 0, goal=GoalSpec.craft())
SMALL_RANGES = ParamRanges(width=(4, 4), height=(4, 4), trees_env=(0, 2),
                           rocks_env=(0, 1), crafting_tables=(0, 1),
                           wood_inv=(0, 2), stone_inv=(0, 1), fires_env=(0, 0))


def test_generate_ac_with_real_learning_is_deterministic_and_covered():
    cfg = BeamConfig(width_w=1, branch_n=2, length_u=3)
    a = generate_ac(LF_TARGET_SMALL, cfg, STOP, SMALL_RANGES, seed=11,
                    agent_cfg=FAST)
    b = generate_ac(LF_TARGET_SMALL, cfg, STOP, SMALL_RANGES, seed=11,
                    agent_cfg=FAST)
    assert a == b
    assert len(a.tasks) == 3 and a.tasks[-1] == LF_TARGET_SMALL
    kinds = [t.goal.kind for t in a.tasks]
    assert set(kinds) == set(goal_categories())
    assert all(feasible(t) for t in a.tasks)
    assert a.total_lf_episodes >= sum(a.episodes)


def test_generate_ac_rejects_infeasible_target():
    bad = TaskParams(4, 4, 0, 0, 1, 0, 0, 0, goal=GoalSpec.craft())
    with pytest.raises(ValidationError):
        generate_ac(bad, BeamConfig(1, 1, 3), STOP, SMALL_RANGES, seed=0)


def test_default_init_inter_respects_seen_and_raises_when_exhausted():
    rng = np.random.default_rng(0)
    hook = default_init_inter(LF_TARGET_SMALL, SMALL_RANGES, 4)
    task = hook(rng, frozenset({"navigate"}), (2, 0, 0))
    assert task.goal.kind in {"break", "craft"}
    # only break remains, but the ranges cannot host a tree to break
    treeless = ParamRanges(width=(4, 4), height=(4, 4), trees_env=(0, 0),
                           rocks_env=(0, 1), crafting_tables=(0, 1),
                           wood_inv=(0, 2), stone_inv=(0, 1), fires_env=(0, 0))
    hook = default_init_inter(LF_TARGET_SMALL, treeless, 4)
    with pytest.raises(NoFeasibleGoal):
        hook(rng, frozenset({"navigate", "craft"}), (3, 0, 0))


def test_no_feasible_goal_falls_back_to_the_target_early():
    craft_small = TaskParams(4, 4, 2, 1, 1, 0, 0, 0, goal=GoalSpec.craft())
    code = dict(CODE)
    code[craft_small] = 6
    costs = dict(COSTS)
    costs.update({(1, craft_small): 7, (3, craft_small): 7,
                  (6, TARGET): 25})
    pool = {"navigate": NAV1, "break": BRK1, "craft": craft_small}

    def init_inter(rng, seen, slot):
        unseen = [c for c in goal_categories() if c not in seen]
        if not unseen:
            raise NoFeasibleGoal("surplus level, nothing to add")
        return pool[unseen[slot[2] % len(unseen)]]

    def evaluate(task, policy, rng):
        parent = int(round(float(policy.b2[0])))
        marker = MlpParams(np.zeros((1, 1)), np.zeros(1), np.zeros((1, 5)),
                           np.array([float(code[task]), 0, 0, 0, 0]))
        return costs[(parent, task)], 1, marker

    result = generate_ac(TARGET, BeamConfig(1, 2, 5), STOP, seed=0,
                         init_src=lambda rng, slot: [NAV1, BRK1][slot[2] % 2],
                         init_inter=init_inter, evaluate=evaluate)
    # all categories are covered by level 3; the exhausted level 4 falls
    # back to the target instead of aborting the search
    assert list(result.tasks) == [NAV1, BRK1, craft_small, TARGET, TARGET]


def test_fallback_before_coverage_is_an_error():
    init_src, _, evaluate = synthetic_hooks()

    def exhausted_inter(rng, seen, slot):
        raise NoFeasibleGoal("nothing left")

    with pytest.raises(ValidationError, match="never visits"):
        generate_ac(TARGET, BeamConfig(1, 2, 4), STOP, seed=0,
                    init_src=init_src, init_inter=exhausted_inter,
                    evaluate=evaluate)


# ---------------------------------------------------------------------------
# Handcrafted curricula
# ---------------------------------------------------------------------------

def hc_doc(tasks):
    return {"schema": "curriculum-manifest", "tasks": [{"lf": t.to_dict()} for t in tasks]}


def test_load_hc_round_trip(tmp_path):
    seq = [NAV1, BRK1, LF_TARGET_SMALL]
    path = tmp_path / "hc.json"
    path.write_text(json.dumps(hc_doc(seq)))
    result = load_hc(path, LF_TARGET_SMALL)
    assert list(result.tasks) == seq
    assert result.total_lf_timesteps == 0 and result.episodes == (0, 0, 0)


def test_load_hc_accepts_a_bare_task_list(tmp_path):
    path = tmp_path / "hc.json"
    path.write_text(json.dumps([t.to_dict() for t in (NAV1, BRK1, LF_TARGET_SMALL)]))
    assert load_hc(path, LF_TARGET_SMALL).tasks[-1] == LF_TARGET_SMALL


def test_load_hc_rejects_wrong_tail_and_infeasible_and_garbage(tmp_path):
    path = tmp_path / "hc.json"
    path.write_text(json.dumps(hc_doc([NAV1, BRK1, NAV2])))
    with pytest.raises(ValidationError, match="last entry"):
        load_hc(path, LF_TARGET_SMALL)

    crafty = TaskParams(4, 4, 0, 0, 1, 0, 0, 0, goal=GoalSpec.craft())
    path.write_text(json.dumps({"tasks": [
        {"lf": NAV1.to_dict()}, {"lf": crafty.to_dict()},
        {"lf": LF_TARGET_SMALL.to_dict()},
    ]}))
    with pytest.raises(ValidationError, match="entry 1"):
        load_hc(path, LF_TARGET_SMALL)

    path.write_text("{not json")
    with pytest.raises(ValidationError, match="unparseable"):
        load_hc(path, LF_TARGET_SMALL)
    with pytest.raises(ValidationError, match="not found"):
        load_hc(tmp_path / "absent.json", LF_TARGET_SMALL)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

HF_TARGET_SMALL = TaskParams(1.6, 1.6, 2, 1, 1, 0, 0, 0, goal=GoalSpec.craft())
TINY_STOP = StopCriterion(delta_g=0.85, window_s=2, budget_b=3)


def test_run_acute_scratch_trains_only_the_target():
    policy, run = run_acute(HF_TARGET_SMALL, AffineMap(), None,
                            BeamConfig(1, 2, 3), TINY_STOP, TINY_STOP,
                            mode="scratch", seed=3, agent_cfg_hf=FAST)
    assert len(run.hf_logs) == 1
    assert run.hf_logs[0].hf_task == HF_TARGET_SMALL
    assert run.hf_logs[0].shaping is False
    assert run.lf_sunk_timesteps == 0 and run.hf_source_timesteps == 0
    assert policy.obs_dim == 122


def test_run_acute_ac_maps_the_curriculum_elementwise():
    amap = AffineMap()
    policy, run = run_acute(HF_TARGET_SMALL, amap, None, BeamConfig(1, 2, 3),
                            TINY_STOP, TINY_STOP, mode="ac", seed=3,
                            ranges=SMALL_RANGES, agent_cfg_lf=FAST,
                            agent_cfg_hf=FAST)
    assert len(run.hf_logs) == 3
    for log in run.hf_logs[:-1]:
        assert log.hf_task == amap.forward(log.lf_task)
        assert log.shaping is True
    assert run.target_log.hf_task == HF_TARGET_SMALL
    assert run.target_log.shaping is False
    assert run.lf_sunk_timesteps == run.curriculum.total_lf_timesteps > 0


def test_run_acute_is_deterministic():
    args = (HF_TARGET_SMALL, AffineMap(), None, BeamConfig(1, 2, 3),
            TINY_STOP, TINY_STOP)
    p1, r1 = run_acute(*args, mode="scratch", seed=5, agent_cfg_hf=FAST)
    p2, r2 = run_acute(*args, mode="scratch", seed=5, agent_cfg_hf=FAST)
    assert np.array_equal(p1.flat(), p2.flat())
    assert r1.hf_logs[0].returns == r2.hf_logs[0].returns


def test_run_acute_noisy_keeps_the_exact_target():
    amap = AffineMap()
    noise = NoiseModel.for_map(amap, default_ranges())
    _, run = run_acute(HF_TARGET_SMALL, amap, noise, BeamConfig(1, 2, 3),
                       TINY_STOP, TINY_STOP, mode="ac", seed=7,
                       ranges=SMALL_RANGES, agent_cfg_lf=FAST,
                       agent_cfg_hf=FAST)
    assert run.noisy is True
    assert run.target_log.hf_task == HF_TARGET_SMALL
    for log in run.hf_logs:
        assert feasible(log.hf_task, "hf")


def test_run_acute_hc_mode_uses_the_file(tmp_path):
    amap = AffineMap()
    lf_target = amap.inverse(HF_TARGET_SMALL)
    path = tmp_path / "hc.json"
    path.write_text(json.dumps(hc_doc([NAV1, BRK1, lf_target])))
    _, run = run_acute(HF_TARGET_SMALL, amap, None, BeamConfig(1, 2, 3),
                       TINY_STOP, TINY_STOP, mode="hc", seed=2, hc_path=path,
                       agent_cfg_hf=FAST)
    assert [log.lf_task for log in run.hf_logs] == [NAV1, BRK1, lf_target]
    assert run.lf_sunk_timesteps == 0


def test_run_acute_validates_mode_and_targets():
    with pytest.raises(ValidationError, match="mode"):
        run_acute(HF_TARGET_SMALL, AffineMap(), None, BeamConfig(1, 2, 3),
                  TINY_STOP, TINY_STOP, mode="banana", seed=0)
    with pytest.raises(ValidationError, match="hc mode"):
        run_acute(HF_TARGET_SMALL, AffineMap(), None, BeamConfig(1, 2, 3),
                  TINY_STOP, TINY_STOP, mode="hc", seed=0)


def test_manifest_is_json_serializable_and_shaped():
    _, run = run_acute(HF_TARGET_SMALL, AffineMap(), None, BeamConfig(1, 2, 3),
                       TINY_STOP, TINY_STOP, mode="scratch", seed=1,
                       agent_cfg_hf=FAST)
    doc = curriculum_manifest(run, extra={"config_hash": "abc"})
    blob = json.loads(json.dumps(doc, sort_keys=True))
    assert blob["schema"] == "curriculum-manifest"
    assert blob["mode"] == "scratch" and blob["config_hash"] == "abc"
    assert len(blob["tasks"]) == 1
    entry = blob["tasks"][0]
    assert entry["lf"] and entry["hf"] and entry["hf_episodes"] >= 1
