"""Trial orchestration: per-trial seeds, worker pools, CSV/JSON artifacts."""

from __future__ import annotations

import csv
import json
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import kernels as K
from .agents import MlpParams, save_checkpoint
from .config import ExperimentConfig
from .curriculum import (
    MODE_AC,
    MODE_HC,
    CurriculumResult,
    RunLogs,
    curriculum_manifest,
    generate_ac,
    load_hc,
    run_acute,
)
from .errors import ValidationError
from .metrics import LearningCurve
from .params import HF, LF, TaskParams

MANIFEST_SCHEMA = "lf-manifest"
RUN_SCHEMA = "run-summary"
EPISODES_SCHEMA = "episodes-csv"
SCHEMA_VERSION = 1
EPISODE_COLUMNS = ("trial", "task_index", "episode", "cumulative_timesteps",
                   "return", "success")


def trial_seed(master_seed: int, trial: int) -> int:
    """Deterministic per-trial seed; collision-free across master seeds."""
    ss = np.random.SeedSequence([master_seed, trial])
    return int(ss.generate_state(1, np.uint64)[0])


def warm_kernels(cfg: ExperimentConfig) -> None:
    """Compile the hot episode runners once, before any fork."""
    K.get_runner(cfg.agent_lf.algo, LF, None)
    K.get_runner(cfg.agent_hf.algo, HF, None)


def _fork_pool(jobs: int) -> ProcessPoolExecutor:
    ctx = multiprocessing.get_context("fork")
    return ProcessPoolExecutor(max_workers=jobs, mp_context=ctx)


def _optimize_worker(args) -> CurriculumResult:
    cfg, seed = args
    lf_target = cfg.amap.inverse(cfg.hf_target)
    return generate_ac(lf_target, cfg.beam, cfg.stop_lf, cfg.lf_ranges,
                       seed=seed, agent_cfg=cfg.agent_lf)


def optimize_lf_trials(cfg: ExperimentConfig, jobs: int = 1) -> list[dict]:
    """One curriculum search per trial; hc mode loads the file instead."""
    lf_target = cfg.amap.inverse(cfg.hf_target)
    seeds = [trial_seed(cfg.master_seed, t) for t in range(cfg.trials)]

    if cfg.mode == MODE_HC:
        shared = load_hc(cfg.hc_path, lf_target)
        results = [shared] * cfg.trials
    elif cfg.trials == 1 and jobs > 1:
        # a single search still fans its candidate evaluations out
        warm_kernels(cfg)
        with _fork_pool(jobs) as pool:
            results = [generate_ac(lf_target, cfg.beam, cfg.stop_lf,
                                   cfg.lf_ranges, seed=seeds[0],
                                   agent_cfg=cfg.agent_lf, pool_map=pool.map)]
    elif jobs > 1:
        warm_kernels(cfg)
        with _fork_pool(min(jobs, cfg.trials)) as pool:
            results = list(pool.map(_optimize_worker, [(cfg, s) for s in seeds]))
    else:
        results = [_optimize_worker((cfg, s)) for s in seeds]

    return [{"trial": t, "seed": seeds[t], "curriculum": results[t]}
            for t in range(cfg.trials)]


def manifest_doc(cfg: ExperimentConfig, entries: list[dict]) -> dict:
    lf_target = cfg.amap.inverse(cfg.hf_target)
    return {
        "schema": MANIFEST_SCHEMA,
        "version": SCHEMA_VERSION,
        "config_hash": cfg.config_hash,
        "master_seed": cfg.master_seed,
        "mode": cfg.mode,
        "lf_target": lf_target.to_dict(),
        "trials": [
            {
                "trial": e["trial"],
                "seed": e["seed"],
                "tasks": [t.to_dict() for t in e["curriculum"].tasks],
                "episodes": list(e["curriculum"].episodes),
                "timesteps": list(e["curriculum"].timesteps),
                "total_lf_episodes": e["curriculum"].total_lf_episodes,
                "total_lf_timesteps": e["curriculum"].total_lf_timesteps,
            }
            for e in entries
        ],
    }


def parse_manifest(doc: dict, trials: int) -> list[dict]:
    """Back from manifest_doc to per-trial curricula, shape-checked."""
    if not isinstance(doc, dict) or doc.get("schema") != MANIFEST_SCHEMA:
        raise ValidationError("not a curriculum manifest (schema mismatch)")
    entries = doc.get("trials", [])
    if len(entries) != trials:
        raise ValidationError(
            f"manifest holds {len(entries)} trials but the config asks for {trials}")
    out = []
    for e in entries:
        tasks = tuple(TaskParams.from_dict(d) for d in e["tasks"])
        curriculum = CurriculumResult(
            tasks=tasks,
            episodes=tuple(int(v) for v in e["episodes"]),
            timesteps=tuple(int(v) for v in e["timesteps"]),
            total_lf_episodes=int(e["total_lf_episodes"]),
            total_lf_timesteps=int(e["total_lf_timesteps"]),
        )
        out.append({"trial": int(e["trial"]), "seed": int(e["seed"]),
                    "curriculum": curriculum})
    return out


def _run_worker(args) -> tuple[MlpParams, RunLogs]:
    cfg, seed, curriculum = args
    return run_acute(
        cfg.hf_target, cfg.amap, cfg.noise, cfg.beam, cfg.stop_lf, cfg.stop_hf,
        cfg.mode, seed=seed, ranges=cfg.lf_ranges, agent_cfg_lf=cfg.agent_lf,
        agent_cfg_hf=cfg.agent_hf, agent_cfg_hf_target=cfg.agent_hf_target,
        hc_path=cfg.hc_path, curriculum=curriculum)


def run_hf_trials(cfg: ExperimentConfig, manifest_entries: list[dict] | None,
                  jobs: int = 1) -> list[tuple[MlpParams, RunLogs]]:
    """Learn the mapped curriculum (or the bare target) once per trial."""
    if cfg.mode == MODE_AC and manifest_entries is None:
        raise ValidationError("ac mode needs an optimize-lf manifest")
    args = []
    for t in range(cfg.trials):
        if manifest_entries is not None:
            entry = manifest_entries[t]
            seed, curriculum = entry["seed"], entry["curriculum"]
        else:
            seed, curriculum = trial_seed(cfg.master_seed, t), None
        args.append((cfg, seed, curriculum))
    if jobs > 1 and cfg.trials > 1:
        warm_kernels(cfg)
        with _fork_pool(min(jobs, cfg.trials)) as pool:
            return list(pool.map(_run_worker, args))
    return [_run_worker(a) for a in args]


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------

def write_json(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def resolved_config_doc(cfg: ExperimentConfig) -> dict:
    return {
        "schema": "resolved-config",
        "version": SCHEMA_VERSION,
        "config_hash": cfg.config_hash,
        "master_seed": cfg.master_seed,
        "kernel_backend": K.backend_name(),
        "config": cfg.resolved,
    }


def _meta_line(schema: str, cfg: ExperimentConfig, **extra) -> str:
    parts = [f"# {schema} v{SCHEMA_VERSION}",
             f"config_hash={cfg.config_hash}",
             f"master_seed={cfg.master_seed}"]
    parts += [f"{k}={v}" for k, v in extra.items()]
    return " ".join(parts) + "\n"


def write_lf_csv(path, cfg: ExperimentConfig, entries: list[dict]) -> None:
    """Search log: every evaluated node, one row per (trial, level, node)."""
    with Path(path).open("w", newline="") as fh:
        fh.write(_meta_line("lf-episodes-csv", cfg))
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("trial", "level", "node", "episodes", "timesteps",
                         "kept", "goal", "task"))
        for e in entries:
            for lvl in e["curriculum"].search_log:
                kept = set(lvl["kept"])
                for cand in lvl["evaluated"]:
                    writer.writerow((
                        e["trial"], lvl["level"], cand["index"],
                        cand["episodes"], cand["timesteps"],
                        int(cand["index"] in kept),
                        cand["task"]["goal"]["kind"],
                        json.dumps(cand["task"], sort_keys=True),
                    ))


def write_episodes_csv(path, cfg: ExperimentConfig,
                       runs: list[tuple[MlpParams, RunLogs]]) -> None:
    """Per-episode rows; cumulative_timesteps is wall clock with sunk cost."""
    with Path(path).open("w", newline="") as fh:
        fh.write(_meta_line(EPISODES_SCHEMA, cfg, mode=cfg.mode))
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EPISODE_COLUMNS)
        for trial, (_, run) in enumerate(runs):
            walk = run.lf_sunk_timesteps
            for task_index, log in enumerate(run.hf_logs):
                for ep, (ret, suc, length) in enumerate(
                        zip(log.returns, log.successes, log.lengths)):
                    walk += int(length)
                    writer.writerow((trial, task_index, ep, walk,
                                     repr(float(ret)), int(suc)))


def run_summary_doc(cfg: ExperimentConfig, manifest_entries: list[dict] | None,
                    runs: list[tuple[MlpParams, RunLogs]]) -> dict:
    trials = []
    for t, (_, run) in enumerate(runs):
        if manifest_entries is not None:
            seed = manifest_entries[t]["seed"]
        else:
            seed = trial_seed(cfg.master_seed, t)
        target = run.target_log
        trials.append({
            "trial": t,
            "seed": seed,
            "lf_sunk_timesteps": run.lf_sunk_timesteps,
            "hf_source_timesteps": run.hf_source_timesteps,
            "target_episodes": target.episodes,
            "target_timesteps": target.timesteps,
            "target_converged": target.converged,
            "total_timesteps": (run.lf_sunk_timesteps
                                + sum(l.timesteps for l in run.hf_logs)),
            "curriculum": curriculum_manifest(run),
        })
    return {
        "schema": RUN_SCHEMA,
        "version": SCHEMA_VERSION,
        "config_hash": cfg.config_hash,
        "master_seed": cfg.master_seed,
        "mode": cfg.mode,
        "noisy": cfg.noisy,
        "kernel_backend": K.backend_name(),
        "trials": trials,
    }


def write_run_artifacts(out_dir: Path, cfg: ExperimentConfig,
                        manifest_entries: list[dict] | None,
                        runs: list[tuple[MlpParams, RunLogs]]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "config.resolved.json", resolved_config_doc(cfg))
    write_episodes_csv(out_dir / "episodes.csv", cfg, runs)
    write_json(out_dir / "run.json", run_summary_doc(cfg, manifest_entries, runs))
    for t, (policy, _) in enumerate(runs):
        save_checkpoint(policy, out_dir / f"policy-trial{t:02d}.json",
                        extra={"config_hash": cfg.config_hash,
                               "master_seed": cfg.master_seed, "trial": t})


# ---------------------------------------------------------------------------
# Reading runs back for evaluation and plotting
# ---------------------------------------------------------------------------

def read_episode_rows(path):
    """(metadata, rows) from an episodes CSV, schema-checked with line numbers."""
    path = Path(path)
    with path.open() as fh:
        meta_line = fh.readline().strip()
        if not meta_line.startswith(f"# {EPISODES_SCHEMA} v"):
            raise ValidationError(f"{path}:1: missing {EPISODES_SCHEMA} header")
        meta = dict(part.split("=", 1) for part in meta_line.split()[3:])
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != EPISODE_COLUMNS:
            raise ValidationError(f"{path}:2: expected columns {EPISODE_COLUMNS}")
        rows = []
        for lineno, rec in enumerate(reader, start=3):
            if len(rec) != len(EPISODE_COLUMNS):
                raise ValidationError(f"{path}:{lineno}: malformed row")
            try:
                rows.append((int(rec[0]), int(rec[1]), int(rec[2]),
                             int(rec[3]), float(rec[4]), bool(int(rec[5]))))
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
    return meta, rows


def load_run_curves(run_dir) -> dict:
    """Per-trial target-task learning curves plus the run summary."""
    run_dir = Path(run_dir)
    summary = read_json(run_dir / "run.json")
    if summary.get("schema") != RUN_SCHEMA:
        raise ValidationError(f"{run_dir}: run.json is not a {RUN_SCHEMA} document")
    meta, rows = read_episode_rows(run_dir / "episodes.csv")
    if meta.get("config_hash") != summary.get("config_hash"):
        raise ValidationError(f"{run_dir}: episodes.csv and run.json disagree "
                              "on the config hash")

    curves = {}
    for trial_doc in summary["trials"]:
        t = trial_doc["trial"]
        sunk = trial_doc["lf_sunk_timesteps"] + trial_doc["hf_source_timesteps"]
        trial_rows = [r for r in rows if r[0] == t]
        if not trial_rows:
            raise ValidationError(f"{run_dir}: no episode rows for trial {t}")
        target_index = max(r[1] for r in trial_rows)
        points = tuple((r[3] - sunk, r[4], r[5]) for r in trial_rows
                       if r[1] == target_index)
        curves[t] = LearningCurve(points=points, sunk_cost_timesteps=sunk)
    return {
        "summary": summary,
        "mode": summary["mode"],
        "curves": curves,
        "converged": {d["trial"]: d["target_converged"]
                      for d in summary["trials"]},
    }
