"""Deterministic SVG rendering: learning-curve bands and episode replays."""

from __future__ import annotations

import numpy as np

from . import kernels as K
from .agents import REINFORCE, MlpParams, select_action
from .envs import make_env
from .envs.core import RewardScheme
from .errors import ValidationError
from .params import LF, TaskParams

PALETTE = ("#1b6ca8", "#d1495b", "#2e933c", "#8c5383", "#e0a458")
OBJECT_COLORS = {"tree": "#2e933c", "rock": "#6b7280", "crafting_table": "#a0622d",
                 "fire": "#e0532f"}

_W, _H = 720, 440
_ML, _MR, _MT, _MB = 70, 20, 28, 48  # plot margins


def _f(v: float) -> str:
    """Fixed-precision coordinate formatting keeps the bytes reproducible."""
    return f"{float(v):.3f}".rstrip("0").rstrip(".")


def _tick_label(v: float) -> str:
    if abs(v) >= 1e6:
        return _f(v / 1e6) + "M"
    if abs(v) >= 1e3:
        return _f(v / 1e3) + "k"
    return _f(v)


def _axes(x_max: float, y_lo: float, y_hi: float, x_label: str, y_label: str):
    parts = []
    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def sx(x):
        return _ML + pw * (x / x_max if x_max else 0.0)

    def sy(y):
        span = (y_hi - y_lo) or 1.0
        return _MT + ph * (1.0 - (y - y_lo) / span)

    parts.append(f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" '
                 'fill="none" stroke="#444" stroke-width="1"/>')
    for i in range(6):
        xv = x_max * i / 5
        yv = y_lo + (y_hi - y_lo) * i / 5
        parts.append(f'<line x1="{_f(sx(xv))}" y1="{_MT + ph}" x2="{_f(sx(xv))}" '
                     f'y2="{_MT + ph + 5}" stroke="#444"/>')
        parts.append(f'<text x="{_f(sx(xv))}" y="{_MT + ph + 18}" '
                     f'text-anchor="middle" font-size="11">{_tick_label(xv)}</text>')
        parts.append(f'<line x1="{_ML - 5}" y1="{_f(sy(yv))}" x2="{_ML}" '
                     f'y2="{_f(sy(yv))}" stroke="#444"/>')
        parts.append(f'<text x="{_ML - 8}" y="{_f(sy(yv) + 4)}" '
                     f'text-anchor="end" font-size="11">{_tick_label(yv)}</text>')
    parts.append(f'<text x="{_ML + pw / 2}" y="{_H - 10}" text-anchor="middle" '
                 f'font-size="12">{x_label}</text>')
    parts.append(f'<text x="16" y="{_MT + ph / 2}" text-anchor="middle" '
                 f'font-size="12" transform="rotate(-90 16 {_MT + ph / 2})">'
                 f'{y_label}</text>')
    return parts, sx, sy


def render_curves_svg(series: list[dict], config_hash: str,
                      master_seed: int) -> str:
    """Mean lines with SD bands; each series starts at its sunk-cost offset.

    Series entries: {label, x, mean, sd} with equal-length 1-d arrays.
    """
    if not series:
        raise ValidationError("nothing to plot")
    for s in series:
        if not (len(s["x"]) == len(s["mean"]) == len(s["sd"])) or len(s["x"]) == 0:
            raise ValidationError(f"series {s.get('label')}: ragged or empty arrays")

    x_max = max(float(np.max(s["x"])) for s in series) or 1.0
    y_lo = min(float(np.min(np.asarray(s["mean"]) - np.asarray(s["sd"]))) for s in series)
    y_hi = max(float(np.max(np.asarray(s["mean"]) + np.asarray(s["sd"]))) for s in series)
    pad = 0.05 * ((y_hi - y_lo) or 1.0)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    parts, sx, sy = _axes(x_max, y_lo, y_hi, "timesteps (sunk cost included)",
                          "return")
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        xs = np.asarray(s["x"], dtype=float)
        mean = np.asarray(s["mean"], dtype=float)
        sd = np.asarray(s["sd"], dtype=float)
        upper = [f"{_f(sx(x))},{_f(sy(y))}" for x, y in zip(xs, mean + sd)]
        lower = [f"{_f(sx(x))},{_f(sy(y))}" for x, y in zip(xs[::-1], (mean - sd)[::-1])]
        parts.append(f'<polygon points="{" ".join(upper + lower)}" '
                     f'fill="{color}" fill-opacity="0.18" stroke="none"/>')
        line = [f"{_f(sx(x))},{_f(sy(y))}" for x, y in zip(xs, mean)]
        parts.append(f'<polyline points="{" ".join(line)}" fill="none" '
                     f'stroke="{color}" stroke-width="1.8"/>')
        ly = _MT + 16 + 16 * i
        parts.append(f'<line x1="{_W - _MR - 150}" y1="{ly - 4}" '
                     f'x2="{_W - _MR - 126}" y2="{ly - 4}" stroke="{color}" '
                     'stroke-width="1.8"/>')
        parts.append(f'<text x="{_W - _MR - 120}" y="{ly}" font-size="11">'
                     f'{s["label"]}</text>')

    body = "\n".join(parts)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" '
            f'height="{_H}" viewBox="0 0 {_W} {_H}">\n'
            f"<!-- learning-curves-svg v1 config_hash={config_hash} "
            f"master_seed={master_seed} -->\n"
            f'<rect width="{_W}" height="{_H}" fill="white"/>\n'
            f"{body}\n</svg>\n")


def record_trajectory(fidelity: str, task: TaskParams, policy: MlpParams,
                      seed: int, algo: str = REINFORCE, epsilon: float = 0.0,
                      shaping: bool = True) -> dict:
    """Replay one greedy-ish episode and capture poses for rendering."""
    env = make_env(fidelity, task, RewardScheme(shaping_enabled=shaping))
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    obs = env.reset(rng)
    layout = env.layout_dict()
    path = [[float(env.agent[0]), float(env.agent[1]), float(env.agent[2])]]
    actions: list[int] = []
    total = 0.0
    success = False
    for _ in range(env.episode_cap()):
        action = select_action(policy, obs, epsilon, rng, algo)
        outcome = env.step(action)
        actions.append(int(action))
        total += outcome.reward
        path.append([float(env.agent[0]), float(env.agent[1]),
                     float(env.agent[2])])
        obs = outcome.observation
        if outcome.terminated:
            success = outcome.success
            break
    return {
        "schema": "trajectory",
        "version": 1,
        "fidelity": fidelity,
        "width": layout["width"],
        "height": layout["height"],
        "objects": layout["objects"],
        "start": layout["agent"],
        "path": path,
        "actions": actions,
        "total_return": total,
        "success": success,
    }


def render_replay_svg(traj: dict, config_hash: str = "", master_seed: int = 0,
                      size: int = 480) -> str:
    """Top-down view: arena, objects, and the agent's path start to finish."""
    for key in ("fidelity", "width", "height", "objects", "path"):
        if key not in traj:
            raise ValidationError(f"trajectory document lacks {key!r}")
    w, h = float(traj["width"]), float(traj["height"])
    grid = traj["fidelity"] == LF
    scale = (size - 40) / max(w, h)
    ox, oy = 20.0, 20.0

    def px(x):
        return ox + x * scale

    def py(y):
        # flip so +y points up like the arena's coordinate frame
        return oy + (h - y) * scale

    parts = [f'<rect x="{_f(ox)}" y="{_f(py(h))}" width="{_f(w * scale)}" '
             f'height="{_f(h * scale)}" fill="#f6f3ea" stroke="#444"/>']
    if grid:
        for i in range(1, int(w)):
            parts.append(f'<line x1="{_f(px(i))}" y1="{_f(py(0))}" '
                         f'x2="{_f(px(i))}" y2="{_f(py(h))}" stroke="#ddd"/>')
        for j in range(1, int(h)):
            parts.append(f'<line x1="{_f(px(0))}" y1="{_f(py(j))}" '
                         f'x2="{_f(px(w))}" y2="{_f(py(j))}" stroke="#ddd"/>')

    for obj in traj["objects"]:
        color = OBJECT_COLORS.get(obj["kind"], "#999")
        if grid:
            parts.append(f'<rect x="{_f(px(obj["x"]) + 1)}" '
                         f'y="{_f(py(obj["y"] + 1) + 1)}" '
                         f'width="{_f(scale - 2)}" height="{_f(scale - 2)}" '
                         f'fill="{color}" fill-opacity="0.8"/>')
        else:
            r = float(obj.get("radius", K.RADIUS)) * scale
            parts.append(f'<circle cx="{_f(px(obj["x"]))}" cy="{_f(py(obj["y"]))}" '
                         f'r="{_f(r)}" fill="{color}" fill-opacity="0.8"/>')

    shift = 0.5 if grid else 0.0  # cell centers on the grid
    pts = [f"{_f(px(p[0] + shift))},{_f(py(p[1] + shift))}" for p in traj["path"]]
    parts.append(f'<polyline points="{" ".join(pts)}" fill="none" '
                 'stroke="#1b6ca8" stroke-width="1.5" stroke-opacity="0.9"/>')
    first, last = traj["path"][0], traj["path"][-1]
    parts.append(f'<circle cx="{_f(px(first[0] + shift))}" '
                 f'cy="{_f(py(first[1] + shift))}" r="4" fill="#2e933c"/>')
    parts.append(f'<circle cx="{_f(px(last[0] + shift))}" '
                 f'cy="{_f(py(last[1] + shift))}" r="4" fill="#d1495b"/>')
    label = ("success" if traj.get("success") else "episode end")
    parts.append(f'<text x="{_f(ox)}" y="{size - 4}" font-size="11">'
                 f'{traj["fidelity"]} replay, {label}, '
                 f'return {_f(traj.get("total_return", 0.0))}</text>')

    body = "\n".join(parts)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
            f'height="{size}" viewBox="0 0 {size} {size}">\n'
            f"<!-- replay-svg v1 config_hash={config_hash} "
            f"master_seed={master_seed} -->\n"
            f'<rect width="{size}" height="{size}" fill="white"/>\n'
            f"{body}\n</svg>\n")
