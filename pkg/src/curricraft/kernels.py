"""Numeric kernels for both environments and the fused episode runners.

Every kernel is written as plain loop-and-ndarray Python that numba can
compile unchanged. The module keeps two callable sets: the interpreted
functions themselves (the numpy fallback) and their @njit twins, selected
by the CURRICRAFT_NUMBA environment variable (set to "0" to disable).
Episode runners are produced by a closure factory so one source serves the
grid and planar environments under either backend.

Array layout shared by both environments:
  grid      int64[w, h]    cell contents, -1 empty, else kind code (grid env)
  obj_kind  int64[n]       object kinds (planar env)
  obj_xy    float64[n, 2]  object centers
  obj_alive int64[n]       1 while the object exists
  agent     float64[3]     x, y, heading (grid: integer cells + quadrant code)
  inv       int64[3]       wood, stone, has_axe
  progress  int64[2]       trees broken, rocks broken
  goal      int64[3]       kind code, arg1, arg2
  rewards   float64[4]     step penalty, success bonus, break bonus, fire penalty
"""

from __future__ import annotations

import math
import os

import numpy as np

# Kind codes shared with observations (one-hot positions).
KIND_TREE = 0
KIND_ROCK = 1
KIND_TABLE = 2
KIND_WALL = 3
KIND_FIRE = 4

N_ACTIONS = 5
A_FORWARD = 0
A_LEFT = 1
A_RIGHT = 2
A_BREAK = 3
A_CRAFT = 4

# Goal codes for the int64[3] encoding.
GOAL_CODE_NAVIGATE = 0
GOAL_CODE_BREAK = 1
GOAL_CODE_CRAFT = 2

LF_BEAMS = 8
HF_BEAMS = 20
PER_BEAM = 6
LF_OBS_DIM = LF_BEAMS * PER_BEAM + 2
HF_OBS_DIM = HF_BEAMS * PER_BEAM + 2

RECIPE_WOOD = 2
RECIPE_STONE = 1

# Planar geometry: disc radius, stride, turn, interaction thresholds.
RADIUS = 0.15
FORWARD_STEP = 0.25
TURN_STEP = math.pi / 9.0
INTERACT_RANGE = 0.5
INTERACT_BEARING = math.pi / 9.0
HF_BEAM_STEP = math.pi / 10.0

TWO_PI = 2.0 * math.pi
SQRT2 = math.sqrt(2.0)

# Heading quadrants 0..3 turn counter-clockwise: +x, +y, -x, -y.
DIRS4 = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=np.int64)
# Eight ray directions, counter-clockwise from +x; beam k of heading q uses
# index (2q + k) mod 8.
DIRS8 = np.array(
    [[1, 0], [1, 1], [0, 1], [-1, 1], [-1, 0], [-1, -1], [0, -1], [1, -1]],
    dtype=np.int64,
)


def _numba_enabled() -> bool:
    if os.environ.get("CURRICRAFT_NUMBA", "1") == "0":
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


NUMBA_ENABLED = _numba_enabled()


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


# ---------------------------------------------------------------------------
# Grid environment kernels
# ---------------------------------------------------------------------------

def lf_observe(grid, agent, wood, stone, out):
    """Fill `out` with 8 beam one-hots + distances and inventory scalars."""
    w = grid.shape[0]
    h = grid.shape[1]
    diag = math.sqrt(float(w * w + h * h))
    ax = int(agent[0])
    ay = int(agent[1])
    heading = int(agent[2])
    for i in range(out.shape[0]):
        out[i] = 0.0
    for k in range(LF_BEAMS):
        d = (2 * heading + k) % 8
        dx = DIRS8[d, 0]
        dy = DIRS8[d, 1]
        unit = SQRT2 if dx != 0 and dy != 0 else 1.0
        x = ax
        y = ay
        steps = 0
        kind = KIND_WALL
        while True:
            steps += 1
            x += dx
            y += dy
            if x < 0 or x >= w or y < 0 or y >= h:
                kind = KIND_WALL
                break
            if grid[x, y] >= 0:
                kind = int(grid[x, y])
                break
        out[k * PER_BEAM + kind] = 1.0
        out[k * PER_BEAM + 5] = steps * unit / diag
    out[LF_BEAMS * PER_BEAM] = min(wood / float(RECIPE_WOOD), 1.0)
    out[LF_BEAMS * PER_BEAM + 1] = min(stone / float(RECIPE_STONE), 1.0)


def lf_step(grid, agent, inv, progress, action, goal, rewards):
    """Advance the grid state by one action; return (reward, done, success)."""
    w = grid.shape[0]
    h = grid.shape[1]
    r = rewards[0]
    if action == A_FORWARD:
        hd = int(agent[2])
        nx = int(agent[0]) + DIRS4[hd, 0]
        ny = int(agent[1]) + DIRS4[hd, 1]
        if 0 <= nx < w and 0 <= ny < h:
            cell = grid[nx, ny]
            if cell == KIND_FIRE:
                agent[0] = float(nx)
                agent[1] = float(ny)
                return rewards[3], True, False
            if cell < 0:
                agent[0] = float(nx)
                agent[1] = float(ny)
    elif action == A_LEFT:
        agent[2] = float((int(agent[2]) + 1) % 4)
    elif action == A_RIGHT:
        agent[2] = float((int(agent[2]) + 3) % 4)
    elif action == A_BREAK:
        hd = int(agent[2])
        fx = int(agent[0]) + DIRS4[hd, 0]
        fy = int(agent[1]) + DIRS4[hd, 1]
        if 0 <= fx < w and 0 <= fy < h:
            cell = grid[fx, fy]
            if cell == KIND_TREE:
                grid[fx, fy] = -1
                inv[0] += 1
                progress[0] += 1
                r += rewards[2]
            elif cell == KIND_ROCK:
                grid[fx, fy] = -1
                inv[1] += 1
                progress[1] += 1
                r += rewards[2]
    elif action == A_CRAFT:
        hd = int(agent[2])
        fx = int(agent[0]) + DIRS4[hd, 0]
        fy = int(agent[1]) + DIRS4[hd, 1]
        if 0 <= fx < w and 0 <= fy < h:
            if grid[fx, fy] == KIND_TABLE and inv[0] >= RECIPE_WOOD and inv[1] >= RECIPE_STONE:
                inv[0] -= RECIPE_WOOD
                inv[1] -= RECIPE_STONE
                inv[2] = 1

    success = False
    if goal[0] == GOAL_CODE_NAVIGATE:
        hd = int(agent[2])
        fx = int(agent[0]) + DIRS4[hd, 0]
        fy = int(agent[1]) + DIRS4[hd, 1]
        if 0 <= fx < w and 0 <= fy < h and grid[fx, fy] == goal[1]:
            success = True
    elif goal[0] == GOAL_CODE_BREAK:
        success = progress[0] >= goal[1] and progress[1] >= goal[2]
    else:
        success = inv[2] == 1
    if success:
        return r + rewards[1], True, True
    return r, False, False


# ---------------------------------------------------------------------------
# Planar environment kernels
# ---------------------------------------------------------------------------

def hf_ray(obj_kind, obj_xy, obj_alive, ax, ay, ang, w, h):
    """First hit along a ray: (kind, center-to-surface distance)."""
    dx = math.cos(ang)
    dy = math.sin(ang)
    if dx > 0.0:
        tx = (w - ax) / dx
    elif dx < 0.0:
        tx = -ax / dx
    else:
        tx = 1e18
    if dy > 0.0:
        ty = (h - ay) / dy
    elif dy < 0.0:
        ty = -ay / dy
    else:
        ty = 1e18
    best = tx if tx < ty else ty
    kind = KIND_WALL
    rr = RADIUS * RADIUS
    for i in range(obj_kind.shape[0]):
        if obj_alive[i] == 0:
            continue
        cx = obj_xy[i, 0] - ax
        cy = obj_xy[i, 1] - ay
        proj = cx * dx + cy * dy
        if proj <= 0.0:
            continue
        perp2 = cx * cx + cy * cy - proj * proj
        if perp2 > rr:
            continue
        t = proj - math.sqrt(rr - perp2)
        if t < 0.0:
            t = 0.0
        if t < best:
            best = t
            kind = int(obj_kind[i])
    return kind, best


def _hf_observe_source(ray):
    def observe(obj_kind, obj_xy, obj_alive, agent, wood, stone, out, w, h):
        diag = math.sqrt(w * w + h * h)
        ax = agent[0]
        ay = agent[1]
        th = agent[2]
        for i in range(out.shape[0]):
            out[i] = 0.0
        for k in range(HF_BEAMS):
            kind, dist = ray(obj_kind, obj_xy, obj_alive, ax, ay, th + k * HF_BEAM_STEP, w, h)
            out[k * PER_BEAM + kind] = 1.0
            out[k * PER_BEAM + 5] = dist / diag
        out[HF_BEAMS * PER_BEAM] = min(wood / float(RECIPE_WOOD), 1.0)
        out[HF_BEAMS * PER_BEAM + 1] = min(stone / float(RECIPE_STONE), 1.0)

    return observe


def _hf_step_source(ray):
    def step(obj_kind, obj_xy, obj_alive, agent, inv, progress, action, goal, rewards, w, h):
        r = rewards[0]
        if action == A_FORWARD:
            nx = agent[0] + FORWARD_STEP * math.cos(agent[2])
            ny = agent[1] + FORWARD_STEP * math.sin(agent[2])
            if RADIUS <= nx <= w - RADIUS and RADIUS <= ny <= h - RADIUS:
                fire = False
                blocked = False
                lim = (2.0 * RADIUS) * (2.0 * RADIUS)
                for i in range(obj_kind.shape[0]):
                    if obj_alive[i] == 0:
                        continue
                    cx = obj_xy[i, 0] - nx
                    cy = obj_xy[i, 1] - ny
                    if cx * cx + cy * cy < lim:
                        if obj_kind[i] == KIND_FIRE:
                            fire = True
                        else:
                            blocked = True
                if fire:
                    agent[0] = nx
                    agent[1] = ny
                    return rewards[3], True, False
                if not blocked:
                    agent[0] = nx
                    agent[1] = ny
        elif action == A_LEFT:
            agent[2] = (agent[2] + TURN_STEP) % TWO_PI
        elif action == A_RIGHT:
            agent[2] = (agent[2] - TURN_STEP) % TWO_PI
        elif action == A_BREAK:
            best = -1
            best_d2 = INTERACT_RANGE * INTERACT_RANGE
            for i in range(obj_kind.shape[0]):
                if obj_alive[i] == 0:
                    continue
                if obj_kind[i] != KIND_TREE and obj_kind[i] != KIND_ROCK:
                    continue
                cx = obj_xy[i, 0] - agent[0]
                cy = obj_xy[i, 1] - agent[1]
                d2 = cx * cx + cy * cy
                if d2 > best_d2:
                    continue
                bearing = (math.atan2(cy, cx) - agent[2] + math.pi) % TWO_PI - math.pi
                if abs(bearing) <= INTERACT_BEARING:
                    best = i
                    best_d2 = d2
            if best >= 0:
                obj_alive[best] = 0
                if obj_kind[best] == KIND_TREE:
                    inv[0] += 1
                    progress[0] += 1
                else:
                    inv[1] += 1
                    progress[1] += 1
                r += rewards[2]
        elif action == A_CRAFT:
            if inv[0] >= RECIPE_WOOD and inv[1] >= RECIPE_STONE:
                lim2 = INTERACT_RANGE * INTERACT_RANGE
                for i in range(obj_kind.shape[0]):
                    if obj_alive[i] == 0 or obj_kind[i] != KIND_TABLE:
                        continue
                    cx = obj_xy[i, 0] - agent[0]
                    cy = obj_xy[i, 1] - agent[1]
                    if cx * cx + cy * cy > lim2:
                        continue
                    bearing = (math.atan2(cy, cx) - agent[2] + math.pi) % TWO_PI - math.pi
                    if abs(bearing) <= INTERACT_BEARING:
                        inv[0] -= RECIPE_WOOD
                        inv[1] -= RECIPE_STONE
                        inv[2] = 1
                        break

        success = False
        if goal[0] == GOAL_CODE_NAVIGATE:
            kind, dist = ray(obj_kind, obj_xy, obj_alive, agent[0], agent[1], agent[2], w, h)
            success = kind == goal[1] and dist <= INTERACT_RANGE
        elif goal[0] == GOAL_CODE_BREAK:
            success = progress[0] >= goal[1] and progress[1] >= goal[2]
        else:
            success = inv[2] == 1
        if success:
            return r + rewards[1], True, True
        return r, False, False

    return step


# Interpreted planar kernels (the numpy fallback path).
hf_observe = _hf_observe_source(hf_ray)
hf_step = _hf_step_source(hf_ray)


# ---------------------------------------------------------------------------
# Policy network kernels
# ---------------------------------------------------------------------------

def mlp_forward(obs, w1, b1, w2, b2):
    """Affine-tanh-affine evaluation; w1 is (obs_dim, hidden), w2 (hidden, 5)."""
    hidden = np.tanh(np.dot(obs, w1) + b1)
    return np.dot(hidden, w2) + b2


def select_softmax(logits, epsilon, u_branch, u_pick):
    """Epsilon-uniform, else inverse-CDF sample of softmax(logits)."""
    if u_branch < epsilon:
        a = int(u_pick * N_ACTIONS)
        return a if a < N_ACTIONS else N_ACTIONS - 1
    m = logits[0]
    for i in range(1, N_ACTIONS):
        if logits[i] > m:
            m = logits[i]
    total = 0.0
    for i in range(N_ACTIONS):
        total += math.exp(logits[i] - m)
    acc = 0.0
    for i in range(N_ACTIONS):
        acc += math.exp(logits[i] - m) / total
        if u_pick < acc:
            return i
    return N_ACTIONS - 1


def select_argmax(qvals, epsilon, u_branch, u_pick):
    """Epsilon-uniform, else greedy argmax (first maximum wins)."""
    if u_branch < epsilon:
        a = int(u_pick * N_ACTIONS)
        return a if a < N_ACTIONS else N_ACTIONS - 1
    best = 0
    for i in range(1, N_ACTIONS):
        if qvals[i] > qvals[best]:
            best = i
    return best


# ---------------------------------------------------------------------------
# Fused episode runners
# ---------------------------------------------------------------------------

def _reinforce_runner_source(is_lf, observe_lf, step_lf, observe_hf, step_hf, forward, select):
    def run(grid, obj_kind, obj_xy, obj_alive, agent, inv, progress, goal, rewards,
            w, h, cap, epsilon, uniforms, w1, b1, w2, b2, obs_buf, act_buf, rew_buf):
        total = 0.0
        for t in range(cap):
            if is_lf:
                observe_lf(grid, agent, inv[0], inv[1], obs_buf[t])
            else:
                observe_hf(obj_kind, obj_xy, obj_alive, agent, inv[0], inv[1], obs_buf[t], w, h)
            logits = forward(obs_buf[t], w1, b1, w2, b2)
            a = select(logits, epsilon, uniforms[2 * t], uniforms[2 * t + 1])
            if is_lf:
                r, done, success = step_lf(grid, agent, inv, progress, a, goal, rewards)
            else:
                r, done, success = step_hf(
                    obj_kind, obj_xy, obj_alive, agent, inv, progress, a, goal, rewards, w, h
                )
            act_buf[t] = a
            rew_buf[t] = r
            total += r
            if done:
                return t + 1, total, success
        return cap, total, False

    return run


def _dqn_runner_source(is_lf, observe_lf, step_lf, observe_hf, step_hf, forward, select):
    def run(grid, obj_kind, obj_xy, obj_alive, agent, inv, progress, goal, rewards,
            w, h, cap, epsilon, uniforms, batch_uniforms,
            w1, b1, w2, b2, t1, c1, t2, c2,
            rep_obs, rep_next, rep_act, rep_rew, rep_done, rep_state, global_step,
            gamma, lr, batch, train_freq, learn_start, sync_every,
            obs_now, obs_next):
        capacity = rep_obs.shape[0]
        total = 0.0
        updates = 0
        if is_lf:
            observe_lf(grid, agent, inv[0], inv[1], obs_now)
        else:
            observe_hf(obj_kind, obj_xy, obj_alive, agent, inv[0], inv[1], obs_now, w, h)
        for t in range(cap):
            qvals = forward(obs_now, w1, b1, w2, b2)
            a = select(qvals, epsilon, uniforms[2 * t], uniforms[2 * t + 1])
            if is_lf:
                r, done, success = step_lf(grid, agent, inv, progress, a, goal, rewards)
            else:
                r, done, success = step_hf(
                    obj_kind, obj_xy, obj_alive, agent, inv, progress, a, goal, rewards, w, h
                )
            if is_lf:
                observe_lf(grid, agent, inv[0], inv[1], obs_next)
            else:
                observe_hf(obj_kind, obj_xy, obj_alive, agent, inv[0], inv[1], obs_next, w, h)
            pos = rep_state[1]
            for i in range(obs_now.shape[0]):
                rep_obs[pos, i] = obs_now[i]
                rep_next[pos, i] = obs_next[i]
            rep_act[pos] = a
            rep_rew[pos] = r
            rep_done[pos] = 1 if done else 0
            rep_state[1] = (pos + 1) % capacity
            if rep_state[0] < capacity:
                rep_state[0] = rep_state[0] + 1
            global_step[0] += 1
            total += r

            if rep_state[0] >= learn_start and global_step[0] % train_freq == 0:
                size = rep_state[0]
                obs_dim = obs_now.shape[0]
                bo = np.empty((batch, obs_dim), dtype=np.float64)
                bn = np.empty((batch, obs_dim), dtype=np.float64)
                ba = np.empty(batch, dtype=np.int64)
                br = np.empty(batch, dtype=np.float64)
                bd = np.empty(batch, dtype=np.float64)
                for j in range(batch):
                    idx = int(batch_uniforms[updates * batch + j] * size)
                    if idx >= size:
                        idx = size - 1
                    for i in range(obs_dim):
                        bo[j, i] = rep_obs[idx, i]
                        bn[j, i] = rep_next[idx, i]
                    ba[j] = rep_act[idx]
                    br[j] = rep_rew[idx]
                    bd[j] = float(rep_done[idx])
                updates += 1

                hb = np.tanh(np.dot(bo, w1) + b1)
                qb = np.dot(hb, w2) + b2
                hn = np.tanh(np.dot(bn, t1) + c1)
                qn = np.dot(hn, t2) + c2

                dz = np.zeros((batch, N_ACTIONS), dtype=np.float64)
                for j in range(batch):
                    mx = qn[j, 0]
                    for i in range(1, N_ACTIONS):
                        if qn[j, i] > mx:
                            mx = qn[j, i]
                    y = br[j] + gamma * (1.0 - bd[j]) * mx
                    dz[j, ba[j]] = 2.0 * (qb[j, ba[j]] - y) / batch

                hbt = np.ascontiguousarray(hb.T)
                dw2 = np.dot(hbt, dz)
                db2 = np.zeros(N_ACTIONS, dtype=np.float64)
                for j in range(batch):
                    for i in range(N_ACTIONS):
                        db2[i] += dz[j, i]
                w2t = np.ascontiguousarray(w2.T)
                dh = np.dot(dz, w2t)
                da = dh * (1.0 - hb * hb)
                bot = np.ascontiguousarray(bo.T)
                dw1 = np.dot(bot, da)
                db1 = np.zeros(b1.shape[0], dtype=np.float64)
                for j in range(batch):
                    for i in range(b1.shape[0]):
                        db1[i] += da[j, i]

                for i in range(w1.shape[0]):
                    for k in range(w1.shape[1]):
                        w1[i, k] -= lr * dw1[i, k]
                for i in range(b1.shape[0]):
                    b1[i] -= lr * db1[i]
                for i in range(w2.shape[0]):
                    for k in range(w2.shape[1]):
                        w2[i, k] -= lr * dw2[i, k]
                for i in range(b2.shape[0]):
                    b2[i] -= lr * db2[i]

            if global_step[0] % sync_every == 0:
                for i in range(w1.shape[0]):
                    for k in range(w1.shape[1]):
                        t1[i, k] = w1[i, k]
                for i in range(b1.shape[0]):
                    c1[i] = b1[i]
                for i in range(w2.shape[0]):
                    for k in range(w2.shape[1]):
                        t2[i, k] = w2[i, k]
                for i in range(b2.shape[0]):
                    c2[i] = b2[i]

            for i in range(obs_now.shape[0]):
                obs_now[i] = obs_next[i]
            if done:
                return t + 1, total, success
        return cap, total, False

    return run


_PY_KERNELS = {
    "lf_observe": lf_observe,
    "lf_step": lf_step,
    "hf_ray": hf_ray,
    "hf_observe": hf_observe,
    "hf_step": hf_step,
    "mlp_forward": mlp_forward,
    "select_softmax": select_softmax,
    "select_argmax": select_argmax,
}

_NB_KERNELS: dict = {}
_RUNNER_CACHE: dict = {}


def _jit_kernels() -> dict:
    """Compile the shared-source kernels once; cached Dispatchers."""
    if _NB_KERNELS:
        return _NB_KERNELS
    from numba import njit

    opts = dict(cache=True, fastmath=False)
    ray = njit(**opts)(hf_ray)
    _NB_KERNELS.update(
        lf_observe=njit(**opts)(lf_observe),
        lf_step=njit(**opts)(lf_step),
        hf_ray=ray,
        # Closures over the compiled ray cannot use the on-disk cache.
        hf_observe=njit(cache=False)(_hf_observe_source(ray)),
        hf_step=njit(cache=False)(_hf_step_source(ray)),
        mlp_forward=njit(**opts)(mlp_forward),
        select_softmax=njit(**opts)(select_softmax),
        select_argmax=njit(**opts)(select_argmax),
    )
    return _NB_KERNELS


def get_kernels(jit: bool | None = None) -> dict:
    """Kernel set for the requested backend (default: module backend)."""
    use_jit = NUMBA_ENABLED if jit is None else jit
    return _jit_kernels() if use_jit else _PY_KERNELS


def get_runner(algo: str, fidelity: str, jit: bool | None = None):
    """Fused episode runner for (algo, fidelity) on the chosen backend.

    algo is "reinforce" (collect-only) or "dqn" (in-episode replay updates);
    fidelity is "lf" or "hf".
    """
    use_jit = NUMBA_ENABLED if jit is None else jit
    key = (algo, fidelity, use_jit)
    if key in _RUNNER_CACHE:
        return _RUNNER_CACHE[key]
    ker = get_kernels(use_jit)
    is_lf = fidelity == "lf"
    select = ker["select_softmax"] if algo == "reinforce" else ker["select_argmax"]
    source = _reinforce_runner_source if algo == "reinforce" else _dqn_runner_source
    run = source(is_lf, ker["lf_observe"], ker["lf_step"], ker["hf_observe"],
                 ker["hf_step"], ker["mlp_forward"], select)
    if use_jit:
        from numba import njit

        # Closures cannot use the on-disk cache; compiled once per process.
        run = njit(cache=False)(run)
    _RUNNER_CACHE[key] = run
    return run


def dummy_grid() -> np.ndarray:
    """Placeholder grid array for planar-environment runner calls."""
    return np.full((1, 1), -1, dtype=np.int64)


def dummy_objects() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Placeholder object arrays for grid-environment runner calls."""
    return (
        np.zeros(0, dtype=np.int64),
        np.zeros((0, 2), dtype=np.float64),
        np.zeros(0, dtype=np.int64),
    )
