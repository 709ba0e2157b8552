"""Experiment configuration: YAML loading, validation, canonical hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from . import kernels as K
from .agents import ALGOS, AgentConfig, StopCriterion
from .curriculum import MODES
from .errors import ConfigError, NonInvertible, ValidationError
from .mapping import AffineMap, NoiseModel
from .params import (
    GoalSpec,
    HF,
    LF,
    ParamRanges,
    TaskParams,
    default_ranges,
    feasible,
    hf_target_params,
)

VARIANTS = ("plain", "fire")
ENV_PREFIX = "CURRICRAFT_"
# runtime knobs the kernel backend flag owns; never config overrides
_ENV_IGNORED = ("CURRICRAFT_NUMBA",)

_COUNT_KEYS = ("trees", "rocks", "tables", "wood", "stone", "fires")
_RANGE_FIELDS = {
    "width": "width", "height": "height", "trees": "trees_env",
    "rocks": "rocks_env", "tables": "crafting_tables", "wood": "wood_inv",
    "stone": "stone_inv", "fires": "fires_env",
}

_TOP_KEYS = ("variant", "mode", "noisy", "trials", "master_seed", "out_dir",
             "algo_lf", "algo_hf", "hc_path", "hf_target", "lf_ranges", "map",
             "beam", "stop_lf", "stop_hf", "agent_lf", "agent_hf",
             "agent_hf_target")
_AGENT_KEYS = ("lr", "gamma", "eps_start", "eps_end", "eps_fraction", "hidden",
               "replay_capacity", "batch_size", "train_freq", "sync_every",
               "learn_start")
_STOP_KEYS = ("delta_g", "window_s", "budget_b")
_BEAM_KEYS = ("width_w", "branch_n", "length_u")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, fully resolved experiment description."""

    variant: str
    mode: str
    noisy: bool
    trials: int
    master_seed: int
    out_dir: Path
    hc_path: Path | None
    hf_target: TaskParams
    lf_ranges: ParamRanges
    amap: AffineMap
    noise: NoiseModel | None
    beam: "BeamConfig"
    stop_lf: StopCriterion
    stop_hf: StopCriterion
    agent_lf: AgentConfig
    agent_hf: AgentConfig
    agent_hf_target: AgentConfig
    resolved: dict
    config_hash: str


def _section(raw: dict, key: str, allowed, path: str) -> dict:
    value = raw.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(value).__name__}")
    unknown = sorted(set(value) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    return value


def _scalar(raw: dict, key: str, kinds, default, path: str):
    value = raw.get(key, default)
    if isinstance(value, bool) and bool not in (kinds if isinstance(kinds, tuple) else (kinds,)):
        raise ConfigError(f"{path}: expected {kinds}, got a boolean")
    if not isinstance(value, kinds):
        raise ConfigError(
            f"{path}: expected {getattr(kinds, '__name__', kinds)}, "
            f"got {type(value).__name__}")
    return value


def _choice(raw: dict, key: str, options, default, path: str) -> str:
    value = _scalar(raw, key, str, default, path)
    if value not in options:
        raise ConfigError(f"{path}: must be one of {list(options)}, got {value!r}")
    return value


def apply_env_overrides(raw: dict, env=None) -> dict:
    """Fold CURRICRAFT_SECTION__KEY=value environment overrides into the doc."""
    env = os.environ if env is None else env
    out = json.loads(json.dumps(raw))  # deep copy, plain types only
    for name in sorted(env):
        if not name.startswith(ENV_PREFIX) or name in _ENV_IGNORED:
            continue
        parts = [p.lower() for p in name[len(ENV_PREFIX):].split("__")]
        if parts[0] not in _TOP_KEYS:
            raise ConfigError(f"{name}: no config key named {parts[0]!r}")
        try:
            value = yaml.safe_load(env[name])
        except yaml.YAMLError as exc:
            raise ConfigError(f"{name}: unparseable value: {exc}") from exc
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{name}: {part} is not a mapping")
        node[parts[-1]] = value
    return out


def resolve_config(raw: dict) -> ExperimentConfig:
    """Validate a parsed config document and fill in every default."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = sorted(set(raw) - set(_TOP_KEYS))
    if unknown:
        raise ConfigError(f"config: unknown keys {unknown}")

    variant = _choice(raw, "variant", VARIANTS, "plain", "variant")
    mode = _choice(raw, "mode", MODES, "ac", "mode")
    noisy = _scalar(raw, "noisy", bool, False, "noisy")
    trials = _scalar(raw, "trials", int, 10, "trials")
    if trials < 1:
        raise ConfigError("trials: must be at least 1")
    master_seed = _scalar(raw, "master_seed", int, 0, "master_seed")
    if master_seed < 0:
        raise ConfigError("master_seed: must be non-negative")
    out_dir = Path(_scalar(raw, "out_dir", str, "runs/out", "out_dir"))
    algo_lf = _choice(raw, "algo_lf", ALGOS, "reinforce", "algo_lf")
    algo_hf = _choice(raw, "algo_hf", ALGOS, "reinforce", "algo_hf")

    hc_raw = raw.get("hc_path")
    if hc_raw is not None and not isinstance(hc_raw, str):
        raise ConfigError("hc_path: expected a string path")
    if mode == "hc" and hc_raw is None:
        raise ConfigError("hc_path: required when mode is hc")
    hc_path = Path(hc_raw) if hc_raw is not None else None

    target_sec = _section(raw, "hf_target", ("width", "height") + _COUNT_KEYS,
                          "hf_target")
    if target_sec:
        defaults = {"width": None, "height": None, "trees": 0, "rocks": 0,
                    "tables": 0, "wood": 0, "stone": 0, "fires": 0}
        vals = {}
        for key, dflt in defaults.items():
            kinds = (int, float) if key in ("width", "height") else int
            if dflt is None and key not in target_sec:
                raise ConfigError(f"hf_target.{key}: required")
            vals[key] = _scalar(target_sec, key, kinds, dflt, f"hf_target.{key}")
        try:
            hf_target = TaskParams(
                float(vals["width"]), float(vals["height"]), vals["trees"],
                vals["rocks"], vals["tables"], vals["wood"], vals["stone"],
                vals["fires"], goal=GoalSpec.craft())
        except ValidationError as exc:
            raise ConfigError(f"hf_target: {exc}") from exc
    else:
        hf_target = hf_target_params(variant)
    if not feasible(hf_target, HF):
        raise ConfigError(f"hf_target: infeasible task {hf_target.to_dict()}")

    ranges_sec = _section(raw, "lf_ranges", tuple(_RANGE_FIELDS), "lf_ranges")
    if ranges_sec:
        base = dataclasses.asdict(default_ranges(variant))
        for key, value in ranges_sec.items():
            if (not isinstance(value, list) or len(value) != 2
                    or not all(isinstance(v, (int, float)) for v in value)):
                raise ConfigError(f"lf_ranges.{key}: expected [low, high]")
            base[_RANGE_FIELDS[key]] = tuple(value)
        try:
            lf_ranges = ParamRanges(**base)
        except ValidationError as exc:
            raise ConfigError(f"lf_ranges: {exc}") from exc
    else:
        lf_ranges = default_ranges(variant)

    map_sec = _section(raw, "map", ("scale", "offset"), "map")
    try:
        amap = AffineMap(
            a=map_sec.get("scale", AffineMap().a),
            b=map_sec.get("offset", AffineMap().b))
    except ValidationError as exc:
        raise ConfigError(f"map: {exc}") from exc

    try:
        lf_target = amap.inverse(hf_target)
    except (ValidationError, NonInvertible) as exc:
        raise ConfigError(f"map: target does not invert cleanly: {exc}") from exc
    if not feasible(lf_target, LF):
        raise ConfigError(
            f"hf_target: inverse-mapped grid target is infeasible: "
            f"{lf_target.to_dict()}")

    def build(section, keys, ctor, path, **fixed):
        sec = _section(raw, section, keys, path)
        try:
            return ctor(**fixed, **sec)
        except (ValidationError, TypeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    from .curriculum import BeamConfig  # local to avoid cycle at import time

    beam = build("beam", _BEAM_KEYS, BeamConfig, "beam")
    stop_lf = build("stop_lf", _STOP_KEYS, StopCriterion, "stop_lf")
    stop_hf = build("stop_hf", _STOP_KEYS, StopCriterion, "stop_hf")
    agent_lf = build("agent_lf", _AGENT_KEYS, AgentConfig, "agent_lf", algo=algo_lf)
    agent_hf = build("agent_hf", _AGENT_KEYS, AgentConfig, "agent_hf", algo=algo_hf)

    # The final task trains without shaping; it may need its own step size.
    # Keys not given inherit from agent_hf, so the section is optional.
    tgt_sec = _section(raw, "agent_hf_target", _AGENT_KEYS, "agent_hf_target")
    inherited = dataclasses.asdict(agent_hf)
    del inherited["algo"]
    inherited.update(tgt_sec)
    try:
        agent_hf_target = AgentConfig(algo=algo_hf, **inherited)
    except (ValidationError, TypeError) as exc:
        raise ConfigError(f"agent_hf_target: {exc}") from exc
    if agent_hf_target.hidden != agent_hf.hidden:
        raise ConfigError(
            "agent_hf_target: hidden must match agent_hf "
            f"({agent_hf_target.hidden} != {agent_hf.hidden}); the final task "
            "continues from the chained policy")

    noise = NoiseModel.for_map(amap, lf_ranges) if noisy else None

    resolved = {
        "variant": variant,
        "mode": mode,
        "noisy": noisy,
        "trials": trials,
        "master_seed": master_seed,
        "algo_lf": algo_lf,
        "algo_hf": algo_hf,
        "hc_path": str(hc_path) if hc_path else None,
        "hf_target": hf_target.to_dict(),
        "lf_ranges": lf_ranges.to_dict(),
        "map": amap.to_dict(),
        "beam": dataclasses.asdict(beam),
        "stop_lf": dataclasses.asdict(stop_lf),
        "stop_hf": dataclasses.asdict(stop_hf),
        "agent_lf": dataclasses.asdict(agent_lf),
        "agent_hf": dataclasses.asdict(agent_hf),
        "agent_hf_target": dataclasses.asdict(agent_hf_target),
    }
    config_hash = hash_config(resolved)

    return ExperimentConfig(
        variant=variant, mode=mode, noisy=noisy, trials=trials,
        master_seed=master_seed, out_dir=out_dir, hc_path=hc_path,
        hf_target=hf_target, lf_ranges=lf_ranges, amap=amap, noise=noise,
        beam=beam, stop_lf=stop_lf, stop_hf=stop_hf, agent_lf=agent_lf,
        agent_hf=agent_hf, agent_hf_target=agent_hf_target,
        resolved=resolved, config_hash=config_hash)


def hash_config(resolved: dict) -> str:
    """Canonical digest; the kernel backend is part of the identity."""
    doc = {"config": resolved, "kernel_backend": K.backend_name()}
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path, cli_overrides: dict | None = None, env=None) -> ExperimentConfig:
    """Parse a YAML config file; CLI values beat env values beat the file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"unparseable config {path}: {exc}") from exc
    if raw is None:
        raw = {}
    raw = apply_env_overrides(raw, env)
    for key, value in (cli_overrides or {}).items():
        if value is not None:
            raw[key] = value
    return resolve_config(raw)
