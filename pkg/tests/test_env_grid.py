import math

import numpy as np
import pytest

import curricraft.kernels as K
from curricraft.envs import GridEnv, RewardScheme
from curricraft.errors import PlacementFailure, ProtocolViolation
from curricraft.params import GoalSpec, TaskParams, target_task_params
from curricraft.envs.gridworld import place_grid

SCHEME = RewardScheme()


def fixed_env(params, layout, agent, scheme=SCHEME):
    """Env with a hand-authored layout: layout maps (x, y) -> kind code."""
    env = GridEnv(params, scheme)
    env.reset(np.random.default_rng(0))
    env.grid[:] = -1
    for (x, y), kind in layout.items():
        env.grid[x, y] = kind
    env.agent[:] = agent
    env.inv[:] = (params.wood_inv, params.stone_inv, 0)
    env.progress[:] = 0
    return env


def test_reset_places_declared_objects():
    env = GridEnv(target_task_params(), SCHEME)
    env.reset(np.random.default_rng(3))
    counts = {k: int((env.grid == k).sum()) for k in range(5)}
    assert counts[K.KIND_TREE] == 4
    assert counts[K.KIND_ROCK] == 2
    assert counts[K.KIND_TABLE] == 1
    assert counts[K.KIND_FIRE] == 0
    ax, ay = int(env.agent[0]), int(env.agent[1])
    assert env.grid[ax, ay] == -1  # agent on its own distinct cell


def test_reset_same_seed_same_layout():
    env = GridEnv(target_task_params(), SCHEME)
    a = env.reset(np.random.default_rng(42))
    grid_a, agent_a = env.grid.copy(), env.agent.copy()
    b = env.reset(np.random.default_rng(42))
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(grid_a, env.grid)
    np.testing.assert_array_equal(agent_a, env.agent)


def test_placement_capacity_failure():
    p = TaskParams(2, 2, 3, 1, 0, 0, 0, 0, GoalSpec.navigate("tree"))
    with pytest.raises(PlacementFailure):
        place_grid(p, np.random.default_rng(0))


def test_protocol_violations():
    env = GridEnv(target_task_params(), SCHEME)
    with pytest.raises(ProtocolViolation):
        env.step(0)
    p = TaskParams(4, 4, 1, 0, 0, 0, 0, 0, GoalSpec.break_items(1, 0))
    env = fixed_env(p, {(2, 1): K.KIND_TREE}, [1, 1, 0])
    out = env.step(K.A_BREAK)
    assert out.terminated
    with pytest.raises(ProtocolViolation):
        env.step(0)


def test_forward_blocked_by_wall_and_object():
    p = TaskParams(4, 4, 1, 0, 0, 0, 0, 0, GoalSpec.break_items(1, 0))
    env = fixed_env(p, {(1, 1): K.KIND_TREE}, [0, 1, 2])  # facing -x at edge
    out = env.step(K.A_FORWARD)
    assert out.reward == -1.0 and (env.agent[:2] == [0, 1]).all()
    env = fixed_env(p, {(1, 1): K.KIND_TREE}, [0, 1, 0])  # tree ahead blocks
    env.step(K.A_FORWARD)
    assert (env.agent[:2] == [0, 1]).all()


def test_forward_moves_one_cell_and_rotations_cycle():
    p = TaskParams(4, 4, 1, 0, 0, 0, 0, 0, GoalSpec.break_items(1, 0))
    env = fixed_env(p, {(3, 3): K.KIND_TREE}, [1, 1, 0])
    env.step(K.A_FORWARD)
    assert (env.agent == [2, 1, 0]).all()
    env.step(K.A_LEFT)
    assert env.agent[2] == 1  # counter-clockwise: +x -> +y
    env.step(K.A_FORWARD)
    assert (env.agent[:2] == [2, 2]).all()
    for _ in range(4):
        env.step(K.A_RIGHT)
    assert env.agent[2] == 1


def test_break_gives_wood_and_shaped_reward():
    p = TaskParams(4, 4, 1, 0, 0, 0, 0, 0, GoalSpec.break_items(1, 0))
    env = fixed_env(p, {(2, 1): K.KIND_TREE}, [1, 1, 0])
    out = env.step(K.A_BREAK)
    assert out.reward == pytest.approx(-1 + 50 + 1000)  # bonus + goal success
    assert out.success and env.inv[0] == 1 and env.grid[2, 1] == -1


def test_break_without_shaping_pays_no_bonus():
    p = TaskParams(4, 4, 2, 0, 0, 0, 0, 0, GoalSpec.break_items(2, 0))
    env = fixed_env(p, {(2, 1): K.KIND_TREE, (3, 3): K.KIND_TREE}, [1, 1, 0],
                    RewardScheme(shaping_enabled=False))
    out = env.step(K.A_BREAK)
    assert out.reward == -1.0 and env.inv[0] == 1 and not out.terminated


def test_craft_consumes_recipe_and_succeeds():
    p = TaskParams(4, 4, 0, 0, 1, 2, 1, 0, GoalSpec.craft())
    env = fixed_env(p, {(2, 1): K.KIND_TABLE}, [1, 1, 0])
    out = env.step(K.A_CRAFT)
    assert out.reward == pytest.approx(999.0)
    assert out.success and out.terminated
    assert env.inv.tolist() == [0, 0, 1]


def test_craft_requires_materials_and_table():
    p = TaskParams(4, 4, 1, 0, 1, 1, 1, 0, GoalSpec.craft())
    env = fixed_env(p, {(2, 1): K.KIND_TABLE}, [1, 1, 0])
    env.inv[:] = (1, 1, 0)
    out = env.step(K.A_CRAFT)  # only 1 wood
    assert out.reward == -1.0 and env.inv[2] == 0 and not out.terminated
    p2 = TaskParams(4, 4, 0, 0, 1, 2, 1, 0, GoalSpec.craft())
    env = fixed_env(p2, {(2, 1): K.KIND_TABLE}, [1, 2, 0])  # table not in front
    env.step(K.A_CRAFT)
    assert env.inv[2] == 0


def test_fire_contact_is_instantly_fatal():
    p = TaskParams(4, 4, 1, 0, 0, 0, 0, 1, GoalSpec.break_items(1, 0))
    env = fixed_env(p, {(2, 1): K.KIND_FIRE, (3, 3): K.KIND_TREE}, [1, 1, 0])
    out = env.step(K.A_FORWARD)
    assert out.reward == -1000.0 and out.terminated and not out.success
    assert (env.agent[:2] == [2, 1]).all()  # fire does not block entry


def test_navigate_success_on_adjacency():
    p = TaskParams(4, 4, 1, 0, 0, 0, 0, 0, GoalSpec.navigate("tree"))
    env = fixed_env(p, {(3, 1): K.KIND_TREE}, [1, 1, 0])
    out = env.step(K.A_FORWARD)  # now at (2,1), tree directly ahead
    assert out.success and out.reward == pytest.approx(999.0)


def test_episode_cap_100_truncates_without_success():
    env = GridEnv(TaskParams(4, 4, 1, 0, 0, 0, 0, 0, GoalSpec.break_items(1, 0)), SCHEME)
    assert env.episode_cap() == 100
    env.reset(np.random.default_rng(1))
    last = None
    for _ in range(100):
        last = env.step(K.A_LEFT)  # spin forever
    assert last.terminated and not last.success
    with pytest.raises(ProtocolViolation):
        env.step(K.A_LEFT)


def test_observation_geometry_tree_three_ahead():
    p = TaskParams(8, 8, 1, 0, 0, 0, 0, 0, GoalSpec.navigate("tree"))
    env = fixed_env(p, {(4, 1): K.KIND_TREE}, [1, 1, 0])
    obs = np.zeros(env.obs_dim())
    env._observe(obs)
    assert obs.shape == (50,)
    beam0 = obs[0:6]
    assert beam0[K.KIND_TREE] == 1.0
    assert beam0[5] == pytest.approx(3 / math.sqrt(128))


def test_observation_empty_grid_all_walls():
    p = TaskParams(5, 5, 1, 0, 0, 0, 0, 0, GoalSpec.navigate("tree"))
    env = fixed_env(p, {}, [2, 2, 0])
    obs = np.zeros(env.obs_dim())
    env._observe(obs)
    diag = math.sqrt(50)
    for k in range(8):
        assert obs[k * 6 + K.KIND_WALL] == 1.0
    # facing +x from center of 5x5: 3 cells to leave, diagonals 3*sqrt(2)
    assert obs[0 * 6 + 5] == pytest.approx(3 / diag)
    assert obs[1 * 6 + 5] == pytest.approx(3 * math.sqrt(2) / diag)
    assert obs[4 * 6 + 5] == pytest.approx(3 / diag)


def test_diagonal_beam_sees_object():
    p = TaskParams(8, 8, 1, 0, 0, 0, 0, 0, GoalSpec.navigate("tree"))
    env = fixed_env(p, {(3, 3): K.KIND_TREE}, [1, 1, 0])
    obs = np.zeros(env.obs_dim())
    env._observe(obs)
    beam1 = obs[6:12]  # heading +x, beam 1 points to +x+y
    assert beam1[K.KIND_TREE] == 1.0
    assert beam1[5] == pytest.approx(2 * math.sqrt(2) / math.sqrt(128))


def test_inventory_sensors_normalized_and_capped():
    p = TaskParams(4, 4, 0, 0, 1, 2, 1, 0, GoalSpec.craft())
    env = fixed_env(p, {(2, 1): K.KIND_TABLE}, [1, 1, 0])
    env.inv[:] = (1, 0, 0)
    obs = np.zeros(env.obs_dim())
    env._observe(obs)
    assert obs[48] == 0.5 and obs[49] == 0.0
    env.inv[:] = (5, 3, 0)
    env._observe(obs)
    assert obs[48] == 1.0 and obs[49] == 1.0


def test_random_rollouts_conserve_materials():
    rng = np.random.default_rng(9)
    p = TaskParams(6, 6, 3, 2, 1, 1, 0, 1, GoalSpec.craft())
    env = GridEnv(p, SCHEME)
    for _ in range(30):
        env.reset(rng)
        steps = 0
        while not env.terminated:
            env.step(int(rng.integers(5)))
            steps += 1
            crafted = int(env.inv[2])
            assert env.inv[0] == 1 + env.progress[0] - 2 * crafted
            assert env.inv[1] == 0 + env.progress[1] - 1 * crafted
            assert (env.grid == K.KIND_TREE).sum() == 3 - env.progress[0]
            assert 0 <= env.agent[0] < 6 and 0 <= env.agent[1] < 6
        assert steps <= 100
