"""Learners: a softmax policy-gradient agent and a DQN, over one shared MLP.

Both agents drive episodes through the fused kernel runners and keep all
learning math in float64 numpy. Policies are value objects (MlpParams) so
curriculum chaining is a deep copy, never shared state. Randomness is
consumed from a caller-provided Generator in a fixed per-episode order
(placement draws, then 2 x cap action uniforms, then DQN batch uniforms), so
results depend only on the seed, not on scheduling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels as K
from .envs.core import Env
from .errors import NonFiniteGradient, ShapeMismatch, ValidationError

HIDDEN_DEFAULT = 64

REINFORCE = "reinforce"
DQN = "dqn"
ALGOS = (REINFORCE, DQN)


@dataclass
class MlpParams:
    """Weights of the input -> tanh(hidden) -> linear(5) policy/value net."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self) -> None:
        obs_dim, hidden = self.w1.shape
        if self.b1.shape != (hidden,) or self.w2.shape != (hidden, K.N_ACTIONS) \
                or self.b2.shape != (K.N_ACTIONS,):
            raise ShapeMismatch(
                f"inconsistent layer shapes: {self.w1.shape} {self.b1.shape} "
                f"{self.w2.shape} {self.b2.shape}"
            )
        for arr in (self.w1, self.b1, self.w2, self.b2):
            if not np.isfinite(arr).all():
                raise ValidationError("non-finite policy parameters")

    @property
    def obs_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, obs_dim: int,
             hidden: int = HIDDEN_DEFAULT) -> "MlpParams":
        """Scaled-Gaussian initialization; deterministic in the generator."""
        w1 = rng.normal(0.0, 1.0 / np.sqrt(obs_dim), size=(obs_dim, hidden))
        w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, K.N_ACTIONS))
        return cls(w1, np.zeros(hidden), w2, np.zeros(K.N_ACTIONS))

    def clone(self) -> "MlpParams":
        return MlpParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    @classmethod
    def from_flat(cls, values: np.ndarray, obs_dim: int,
                  hidden: int = HIDDEN_DEFAULT) -> "MlpParams":
        values = np.asarray(values, dtype=np.float64)
        sizes = [obs_dim * hidden, hidden, hidden * K.N_ACTIONS, K.N_ACTIONS]
        if values.shape != (sum(sizes),):
            raise ShapeMismatch(f"expected {sum(sizes)} values, got {values.shape}")
        parts = np.split(values, np.cumsum(sizes)[:-1])
        return cls(parts[0].reshape(obs_dim, hidden), parts[1],
                   parts[2].reshape(hidden, K.N_ACTIONS), parts[3])


def mlp_forward(params: MlpParams, obs: np.ndarray) -> np.ndarray:
    """Logits (REINFORCE) or Q-values (DQN) for one observation."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape != (params.obs_dim,):
        raise ShapeMismatch(f"obs shape {obs.shape} vs net input {params.obs_dim}")
    return K.mlp_forward(obs, params.w1, params.b1, params.w2, params.b2)


def select_action(params: MlpParams, obs: np.ndarray, epsilon: float,
                  rng: np.random.Generator, algo: str = REINFORCE) -> int:
    """Epsilon-uniform exploration over softmax sampling (or Q argmax)."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValidationError(f"epsilon must be in [0, 1], got {epsilon}")
    out = mlp_forward(params, obs)
    u = rng.random(2)
    pick = K.select_softmax if algo == REINFORCE else K.select_argmax
    return int(pick(out, epsilon, u[0], u[1]))


def clone_policy(params: MlpParams) -> MlpParams:
    return params.clone()


# ---------------------------------------------------------------------------
# Checkpoints: flat float64 list + shape header, bit-exact round trip
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "mlp-policy"
CHECKPOINT_VERSION = 1


def checkpoint_dict(params: MlpParams, extra: dict | None = None) -> dict:
    d = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "obs_dim": params.obs_dim,
        "hidden": params.hidden,
        "n_actions": K.N_ACTIONS,
        "values": params.flat().tolist(),
    }
    if extra:
        d.update(extra)
    return d


def save_checkpoint(params: MlpParams, path: str | Path, extra: dict | None = None) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(params, extra), sort_keys=True))


def load_checkpoint(path: str | Path) -> MlpParams:
    d = json.loads(Path(path).read_text())
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"not a policy checkpoint: {path}")
    return MlpParams.from_flat(np.array(d["values"], dtype=np.float64),
                               int(d["obs_dim"]), int(d["hidden"]))


# ---------------------------------------------------------------------------
# Learning configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StopCriterion:
    """Trailing-window convergence rule: success rate >= delta_g over window_s."""

    delta_g: float = 0.85
    window_s: int = 100
    budget_b: int = 5000

    def __post_init__(self) -> None:
        if not 0.0 < self.delta_g <= 1.0:
            raise ValidationError(f"delta_g must be in (0, 1], got {self.delta_g}")
        if self.window_s < 1:
            raise ValidationError("window_s must be >= 1")
        if self.budget_b < self.window_s:
            raise ValidationError("budget_b must be >= window_s")


@dataclass(frozen=True)
class AgentConfig:
    """Hyperparameters shared by both learners; DQN fields ignored by REINFORCE."""

    algo: str = REINFORCE
    lr: float = 1e-3
    gamma: float = 0.99
    eps_start: float = 0.3
    eps_end: float = 0.05
    eps_fraction: float = 0.6  # anneal over this fraction of the budget
    hidden: int = HIDDEN_DEFAULT
    replay_capacity: int = 100_000
    batch_size: int = 64
    train_freq: int = 4
    sync_every: int = 1000
    learn_start: int = 1000

    def __post_init__(self) -> None:
        if self.algo not in ALGOS:
            raise ValidationError(f"unknown algo {self.algo!r}")
        if self.lr <= 0.0:
            raise ValidationError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValidationError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.hidden < 1:
            raise ValidationError("hidden must be >= 1")
        if not 0.0 <= self.eps_end <= self.eps_start <= 1.0:
            raise ValidationError("need 0 <= eps_end <= eps_start <= 1")
        if not 0.0 < self.eps_fraction <= 1.0:
            raise ValidationError("eps_fraction must be in (0, 1]")
        if self.replay_capacity < self.batch_size or self.learn_start < self.batch_size:
            raise ValidationError("replay capacity and learn_start must cover one batch")

    def epsilon_at(self, episode: int, budget: int) -> float:
        """Linear anneal across the first eps_fraction of the budget."""
        span = max(1.0, self.eps_fraction * budget)
        frac = min(1.0, episode / span)
        return self.eps_start + (self.eps_end - self.eps_start) * frac


@dataclass
class LearnResult:
    episodes_used: int
    timesteps_used: int
    final_policy: MlpParams
    success_history: list[bool] = field(default_factory=list)
    return_history: list[float] = field(default_factory=list)
    episode_lengths: list[int] = field(default_factory=list)
    converged: bool = False


# ---------------------------------------------------------------------------
# REINFORCE math (episodic, vectorized over the trajectory)
# ---------------------------------------------------------------------------

def returns_to_go(rewards: np.ndarray, gamma: float) -> np.ndarray:
    g = np.zeros(len(rewards), dtype=np.float64)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        g[t] = acc
    return g


def normalize_returns(g: np.ndarray) -> np.ndarray:
    """Episode-level standardization guarded against tiny spread."""
    return (g - g.mean()) / max(float(g.std()), 1e-8)


def _policy_forward(params: MlpParams, obs_mat: np.ndarray):
    hidden = np.tanh(obs_mat @ params.w1 + params.b1)
    logits = hidden @ params.w2 + params.b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    probs = expd / expd.sum(axis=1, keepdims=True)
    return hidden, logits, probs


def reinforce_surrogate(params: MlpParams, obs_mat: np.ndarray, actions: np.ndarray,
                        ghat: np.ndarray) -> float:
    """Scalar objective sum_t ghat_t * log pi(a_t | s_t), ascended by the update."""
    _, logits, _ = _policy_forward(params, obs_mat)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(len(actions))
    return float((ghat * logp[rows, actions]).sum())


def reinforce_gradients(params: MlpParams, obs_mat: np.ndarray, actions: np.ndarray,
                        ghat: np.ndarray):
    """Ascent direction of the surrogate wrt each layer."""
    hidden, _, probs = _policy_forward(params, obs_mat)
    dz = -probs * ghat[:, None]
    rows = np.arange(len(actions))
    dz[rows, actions] += ghat
    dw2 = hidden.T @ dz
    db2 = dz.sum(axis=0)
    dh = dz @ params.w2.T
    da = dh * (1.0 - hidden * hidden)
    dw1 = obs_mat.T @ da
    db1 = da.sum(axis=0)
    return dw1, db1, dw2, db2


def reinforce_update(params: MlpParams, obs_mat: np.ndarray, actions: np.ndarray,
                     rewards: np.ndarray, gamma: float, lr: float) -> MlpParams:
    """One episodic policy-gradient ascent step; returns new parameters."""
    if len(actions) == 0:
        raise ValidationError("empty trajectory")
    ghat = normalize_returns(returns_to_go(np.asarray(rewards, dtype=np.float64), gamma))
    grads = reinforce_gradients(params, obs_mat, np.asarray(actions), ghat)
    for g in grads:
        if not np.isfinite(g).all():
            raise NonFiniteGradient("REINFORCE gradient diverged")
    dw1, db1, dw2, db2 = grads
    return MlpParams(params.w1 + lr * dw1, params.b1 + lr * db1,
                     params.w2 + lr * dw2, params.b2 + lr * db2)


# ---------------------------------------------------------------------------
# DQN math (single batched step; the fused runner inlines the same sequence)
# ---------------------------------------------------------------------------

def dqn_loss(params: MlpParams, target: MlpParams, batch: dict, gamma: float) -> float:
    """Mean squared TD error of the batch."""
    hb = np.tanh(batch["obs"] @ params.w1 + params.b1)
    qb = hb @ params.w2 + params.b2
    hn = np.tanh(batch["next_obs"] @ target.w1 + target.b1)
    qn = hn @ target.w2 + target.b2
    y = batch["rewards"] + gamma * (1.0 - batch["dones"]) * qn.max(axis=1)
    rows = np.arange(len(batch["actions"]))
    td = qb[rows, batch["actions"]] - y
    return float((td * td).mean())


def dqn_gradients(params: MlpParams, target: MlpParams, batch: dict, gamma: float):
    """Descent gradients of the mean squared TD error."""
    n = len(batch["actions"])
    hb = np.tanh(batch["obs"] @ params.w1 + params.b1)
    qb = hb @ params.w2 + params.b2
    hn = np.tanh(batch["next_obs"] @ target.w1 + target.b1)
    qn = hn @ target.w2 + target.b2
    y = batch["rewards"] + gamma * (1.0 - batch["dones"]) * qn.max(axis=1)
    rows = np.arange(n)
    dz = np.zeros_like(qb)
    dz[rows, batch["actions"]] = 2.0 * (qb[rows, batch["actions"]] - y) / n
    dw2 = hb.T @ dz
    db2 = dz.sum(axis=0)
    dh = dz @ params.w2.T
    da = dh * (1.0 - hb * hb)
    dw1 = batch["obs"].T @ da
    db1 = da.sum(axis=0)
    return dw1, db1, dw2, db2


def dqn_update(params: MlpParams, target: MlpParams, batch: dict, gamma: float,
               lr: float) -> MlpParams:
    """One SGD step on the batch TD loss; returns new parameters."""
    grads = dqn_gradients(params, target, batch, gamma)
    for g in grads:
        if not np.isfinite(g).all():
            raise NonFiniteGradient("DQN gradient diverged")
    dw1, db1, dw2, db2 = grads
    return MlpParams(params.w1 - lr * dw1, params.b1 - lr * db1,
                     params.w2 - lr * dw2, params.b2 - lr * db2)


# ---------------------------------------------------------------------------
# The learn loop
# ---------------------------------------------------------------------------

def _check_finite(params: MlpParams) -> None:
    for arr in (params.w1, params.b1, params.w2, params.b2):
        if not np.isfinite(arr).all():
            raise NonFiniteGradient("policy parameters diverged during learning")


def _runner_env_args(env: Env):
    if env.fidelity == "lf":
        obj_kind, obj_xy, obj_alive = K.dummy_objects()
        return (env.grid, obj_kind, obj_xy, obj_alive, env.agent, env.inv,
                env.progress)
    return (K.dummy_grid(), env.obj_kind, env.obj_xy, env.obj_alive, env.agent,
            env.inv, env.progress)


def _converged(successes: list[bool], stop: StopCriterion) -> bool:
    if len(successes) < stop.window_s:
        return False
    window = successes[-stop.window_s:]
    return sum(window) / stop.window_s >= stop.delta_g


def _object_episode(env: Env, policy: MlpParams, epsilon: float, first_obs: np.ndarray,
                    uniforms: np.ndarray, obs_buf, act_buf, rew_buf):
    """Reference episode through the step() protocol; mirrors the fused runner."""
    pick = K.select_softmax
    obs = first_obs
    total = 0.0
    t = 0
    while True:
        obs_buf[t] = obs
        out = K.mlp_forward(obs, policy.w1, policy.b1, policy.w2, policy.b2)
        a = int(pick(out, epsilon, uniforms[2 * t], uniforms[2 * t + 1]))
        outcome = env.step(a)
        act_buf[t] = a
        rew_buf[t] = outcome.reward
        total += outcome.reward
        obs = outcome.observation
        t += 1
        if outcome.terminated:
            return t, total, outcome.success


class _ReplayRef:
    """Plain-python replay mirror of the fused DQN runner's update cadence."""

    def __init__(self, capacity: int, obs_dim: int):
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros(capacity, dtype=np.int64)
        self.rew = np.zeros(capacity)
        self.done = np.zeros(capacity)
        self.size = 0
        self.pos = 0
        self.global_step = 0

    def push(self, obs, a, r, next_obs, done):
        self.obs[self.pos] = obs
        self.next_obs[self.pos] = next_obs
        self.act[self.pos] = a
        self.rew[self.pos] = r
        self.done[self.pos] = 1.0 if done else 0.0
        self.pos = (self.pos + 1) % len(self.act)
        self.size = min(self.size + 1, len(self.act))
        self.global_step += 1

    def sample(self, u: np.ndarray) -> dict:
        idx = np.minimum((u * self.size).astype(np.int64), self.size - 1)
        return {"obs": self.obs[idx], "next_obs": self.next_obs[idx],
                "actions": self.act[idx], "rewards": self.rew[idx],
                "dones": self.done[idx]}


def _object_episode_dqn(env: Env, policy: MlpParams, target: MlpParams, epsilon: float,
                        first_obs: np.ndarray, uniforms: np.ndarray,
                        batch_uniforms: np.ndarray, replay: _ReplayRef,
                        cfg: "AgentConfig"):
    obs = first_obs
    total = 0.0
    t = 0
    updates = 0
    while True:
        q = K.mlp_forward(obs, policy.w1, policy.b1, policy.w2, policy.b2)
        a = int(K.select_argmax(q, epsilon, uniforms[2 * t], uniforms[2 * t + 1]))
        outcome = env.step(a)
        replay.push(obs, a, outcome.reward, outcome.observation, env.event_terminal)
        total += outcome.reward
        if replay.size >= cfg.learn_start and replay.global_step % cfg.train_freq == 0:
            u = batch_uniforms[updates * cfg.batch_size:(updates + 1) * cfg.batch_size]
            updates += 1
            new = dqn_update(policy, target, replay.sample(u), cfg.gamma, cfg.lr)
            policy.w1, policy.b1, policy.w2, policy.b2 = new.w1, new.b1, new.w2, new.b2
        if replay.global_step % cfg.sync_every == 0:
            target.w1[:], target.b1[:] = policy.w1, policy.b1
            target.w2[:], target.b2[:] = policy.w2, policy.b2
        obs = outcome.observation
        t += 1
        if outcome.terminated:
            return t, total, outcome.success


def learn(env: Env, init_policy: MlpParams, stop: StopCriterion,
          rng: np.random.Generator, cfg: AgentConfig | None = None,
          jit: bool | None = None, fused: bool = True) -> LearnResult:
    """Train on one task until the stopping criterion or the episode budget.

    The initial policy is cloned, never mutated, so callers can chain tasks
    by passing the previous LearnResult.final_policy. fused=False drives the
    step() protocol instead of the kernel runners (reference path, identical
    randomness consumption).
    """
    cfg = cfg or AgentConfig()
    if init_policy.obs_dim != env.obs_dim():
        raise ShapeMismatch(
            f"policy input {init_policy.obs_dim} vs observation {env.obs_dim()}"
        )
    policy = init_policy.clone()
    cap = env.episode_cap()
    runner = K.get_runner(cfg.algo, env.fidelity, jit) if fused else None
    rewards_vec = env.scheme.to_vector()
    goal = env.goal_code
    w, h = float(env.params.width), float(env.params.height)

    obs_buf = np.zeros((cap, env.obs_dim()), dtype=np.float64)
    act_buf = np.zeros(cap, dtype=np.int64)
    rew_buf = np.zeros(cap, dtype=np.float64)

    if cfg.algo == DQN:
        target = policy.clone()
        capacity = cfg.replay_capacity
        updates_per_ep = cap // cfg.train_freq + 1
        if fused:
            rep_obs = np.zeros((capacity, env.obs_dim()), dtype=np.float64)
            rep_next = np.zeros((capacity, env.obs_dim()), dtype=np.float64)
            rep_act = np.zeros(capacity, dtype=np.int64)
            rep_rew = np.zeros(capacity, dtype=np.float64)
            rep_done = np.zeros(capacity, dtype=np.int64)
            rep_state = np.zeros(2, dtype=np.int64)
            global_step = np.zeros(1, dtype=np.int64)
            obs_now = np.zeros(env.obs_dim(), dtype=np.float64)
            obs_next = np.zeros(env.obs_dim(), dtype=np.float64)
        else:
            replay = _ReplayRef(capacity, env.obs_dim())

    result = LearnResult(0, 0, policy)
    for ep in range(stop.budget_b):
        epsilon = cfg.epsilon_at(ep, stop.budget_b)
        first_obs = env.reset(rng)
        uniforms = rng.random(2 * cap)
        if cfg.algo == REINFORCE:
            if fused:
                t, total, success = runner(
                    *_runner_env_args(env), goal, rewards_vec, w, h, cap, epsilon,
                    uniforms, policy.w1, policy.b1, policy.w2, policy.b2,
                    obs_buf, act_buf, rew_buf,
                )
            else:
                t, total, success = _object_episode(
                    env, policy, epsilon, first_obs, uniforms, obs_buf, act_buf, rew_buf
                )
            policy = reinforce_update(policy, obs_buf[:t], act_buf[:t], rew_buf[:t],
                                      cfg.gamma, cfg.lr)
        else:
            batch_uniforms = rng.random(updates_per_ep * cfg.batch_size)
            if fused:
                t, total, success = runner(
                    *_runner_env_args(env), goal, rewards_vec, w, h, cap, epsilon,
                    uniforms, batch_uniforms,
                    policy.w1, policy.b1, policy.w2, policy.b2,
                    target.w1, target.b1, target.w2, target.b2,
                    rep_obs, rep_next, rep_act, rep_rew, rep_done, rep_state,
                    global_step, cfg.gamma, cfg.lr, cfg.batch_size, cfg.train_freq,
                    cfg.learn_start, cfg.sync_every, obs_now, obs_next,
                )
            else:
                t, total, success = _object_episode_dqn(
                    env, policy, target, epsilon, first_obs, uniforms,
                    batch_uniforms, replay, cfg
                )
            _check_finite(policy)
        result.episodes_used += 1
        result.timesteps_used += int(t)
        result.return_history.append(float(total))
        result.success_history.append(bool(success))
        result.episode_lengths.append(int(t))
        if _converged(result.success_history, stop):
            result.converged = True
            break
    result.final_policy = policy
    return result


def run_policy_episode(env: Env, policy: MlpParams, epsilon: float,
                       rng: np.random.Generator, algo: str = REINFORCE):
    """Object-protocol episode used for tests and replay dumps.

    Consumes randomness exactly like the fused runners: placement inside
    reset, then two uniforms per step (branch, pick).
    """
    obs = env.reset(rng)
    uniforms = rng.random(2 * env.episode_cap())
    pick = K.select_softmax if algo == REINFORCE else K.select_argmax
    steps = []
    total = 0.0
    t = 0
    while not env.terminated:
        out = mlp_forward(policy, obs)
        a = int(pick(out, epsilon, uniforms[2 * t], uniforms[2 * t + 1]))
        outcome = env.step(a)
        steps.append((a, outcome.reward))
        total += outcome.reward
        obs = outcome.observation
        t += 1
        if outcome.terminated:
            return steps, total, outcome.success
    return steps, total, False
