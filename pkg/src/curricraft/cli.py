"""Command-line pipeline: optimize-lf, run-hf, eval, plot, validate-config."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .curriculum import MODE_AC
from .errors import ConfigError, CurricraftError, InsufficientEpisodes
from .metrics import (
    LearningCurve,
    MetricsRow,
    aggregate_trials,
    jumpstart,
    time_to_threshold,
    write_metrics_csv,
)
from .params import HF
from .plotting import record_trajectory, render_curves_svg, render_replay_svg
from .runner import (
    load_run_curves,
    manifest_doc,
    optimize_lf_trials,
    parse_manifest,
    read_episode_rows,
    read_json,
    resolved_config_doc,
    run_hf_trials,
    trial_seed,
    write_json,
    write_lf_csv,
    write_run_artifacts,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

CURVE_CHECKPOINTS = 161


def _load(args) -> ExperimentConfig:
    overrides = {"master_seed": getattr(args, "seed", None),
                 "out_dir": getattr(args, "out", None)}
    return load_config(args.config, cli_overrides=overrides)


def cmd_validate_config(args) -> int:
    cfg = _load(args)
    print(f"config ok: hash={cfg.config_hash} mode={cfg.mode} "
          f"trials={cfg.trials} out={cfg.out_dir}")
    return EXIT_OK


def cmd_optimize_lf(args) -> int:
    cfg = _load(args)
    if cfg.mode == "scratch":
        raise ConfigError("mode: scratch has no curriculum to optimize")
    entries = optimize_lf_trials(cfg, jobs=args.jobs)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.resolved.json", resolved_config_doc(cfg))
    write_json(out / "manifest.json", manifest_doc(cfg, entries))
    write_lf_csv(out / "lf_episodes.csv", cfg, entries)
    for e in entries:
        cur = e["curriculum"]
        goals = "->".join(t.goal.kind for t in cur.tasks)
        print(f"trial {e['trial']:2d}: {goals}  "
              f"episodes={cur.total_lf_episodes} timesteps={cur.total_lf_timesteps}")
    print(f"wrote {out / 'manifest.json'} (hash {cfg.config_hash})")
    return EXIT_OK


def cmd_run_hf(args) -> int:
    cfg = _load(args)
    entries = None
    if cfg.mode == MODE_AC:
        manifest_path = Path(args.manifest) if args.manifest else cfg.out_dir / "manifest.json"
        doc = read_json(manifest_path)
        entries = parse_manifest(doc, cfg.trials)
        if doc.get("config_hash") != cfg.config_hash:
            print(f"note: manifest {manifest_path} was produced under config "
                  f"hash {doc.get('config_hash')}, running under {cfg.config_hash}",
                  file=sys.stderr)
    runs = run_hf_trials(cfg, entries, jobs=args.jobs)
    out = cfg.out_dir
    write_run_artifacts(out, cfg, entries, runs)

    # one greedy replay of the first trial's final policy on the target
    seed = entries[0]["seed"] if entries else trial_seed(cfg.master_seed, 0)
    traj = record_trajectory(HF, cfg.hf_target, runs[0][0], seed,
                             algo=cfg.agent_hf.algo, shaping=False)
    traj["config_hash"] = cfg.config_hash
    traj["master_seed"] = cfg.master_seed
    write_json(out / "trajectory.json", traj)

    for t, (_, run) in enumerate(runs):
        target = run.target_log
        total = run.lf_sunk_timesteps + sum(log.timesteps for log in run.hf_logs)
        print(f"trial {t:2d}: converged={target.converged} "
              f"target_episodes={target.episodes} total_timesteps={total}")
    print(f"wrote {out / 'episodes.csv'} (hash {cfg.config_hash})")
    return EXIT_OK


def _method_labels(paths: list[Path]) -> list[str]:
    labels = [p.name for p in paths]
    seen: dict[str, int] = {}
    out = []
    for label in labels:
        seen[label] = seen.get(label, 0) + 1
        out.append(label if labels.count(label) == 1 else f"{label}#{seen[label]}")
    return out


def cmd_eval(args) -> int:
    baseline_dir = Path(args.baseline)
    run_dirs = [Path(d) for d in args.runs]
    if baseline_dir not in run_dirs:
        run_dirs = [baseline_dir] + run_dirs
    else:
        run_dirs = [baseline_dir] + [d for d in run_dirs if d != baseline_dir]
    loaded = [load_run_curves(d) for d in run_dirs]
    labels = _method_labels(run_dirs)

    trials = sorted(loaded[0]["curves"])
    for label, data in zip(labels, loaded):
        if sorted(data["curves"]) != trials:
            raise CurricraftError(
                f"{label}: trial set differs from the baseline's")

    base = loaded[0]
    rows = []
    for label, data in zip(labels, loaded):
        for t in trials:
            curve = data["curves"][t]
            try:
                js = jumpstart(curve, base["curves"][t], args.jumpstart_episodes)
            except InsufficientEpisodes as exc:
                print(f"warning: {label} trial {t}: {exc}", file=sys.stderr)
                js = None
            ttt = time_to_threshold(curve, delta=args.delta, window=args.window)
            rows.append(MetricsRow(
                method=label, trial=t, jumpstart=js, time_to_threshold=ttt,
                sunk_cost=curve.sunk_cost_timesteps,
                converged=bool(data["converged"][t])))

    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "metrics.csv"
    write_metrics_csv(path, rows, base["summary"]["config_hash"],
                      base["summary"]["master_seed"])

    for label in labels:
        mine = [r for r in rows if r.method == label]
        reached = [r.time_to_threshold for r in mine
                   if r.time_to_threshold is not None]
        scored = [r.jumpstart for r in mine if r.jumpstart is not None]
        mean_js = f"{np.mean(scored):.2f}" if scored else "n/a"
        mean_ttt = f"{np.mean(reached):.0f}" if reached else "n/a"
        print(f"{label}: jumpstart(mean)={mean_js} "
              f"reached={len(reached)}/{len(mine)} time_to_threshold(mean)={mean_ttt}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_plot(args) -> int:
    csv_paths = [Path(p) for p in args.csvs]
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    written = []

    if csv_paths:
        labels = _method_labels([p.resolve().parent for p in csv_paths])
        series = []
        metas = []
        per_method = []
        for path in csv_paths:
            meta, rows = read_episode_rows(path)
            metas.append(meta)
            by_trial: dict[int, list] = {}
            for r in rows:
                by_trial.setdefault(r[0], []).append(r)
            curves = []
            for t in sorted(by_trial):
                trial_rows = by_trial[t]
                target_index = max(r[1] for r in trial_rows)
                pts = tuple((r[3], r[4], r[5]) for r in trial_rows
                            if r[1] == target_index)
                curves.append(LearningCurve(points=pts))
            per_method.append(curves)
        x_max = max(c.total_timesteps(len(c) - 1)
                    for curves in per_method for c in curves)
        grid = np.unique(np.linspace(0, x_max, CURVE_CHECKPOINTS).astype(np.int64))
        for label, curves in zip(labels, per_method):
            if len(curves) == 1:
                curves = curves * 2  # degenerate but well-defined: zero spread
            mean, sd = aggregate_trials(curves, grid)
            series.append({"label": label, "x": grid, "mean": mean, "sd": sd})
        svg = render_curves_svg(series, metas[0].get("config_hash", ""),
                                int(metas[0].get("master_seed", 0)))
        path = out / "curves.svg"
        path.write_text(svg)
        written.append(path)

    if args.replay:
        traj = read_json(args.replay)
        svg = render_replay_svg(traj, traj.get("config_hash", ""),
                                int(traj.get("master_seed", 0)))
        path = out / "replay.svg"
        path.write_text(svg)
        written.append(path)

    if not written:
        raise ConfigError("plot: give at least one episodes CSV or --replay file")
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curricraft",
        description="Curriculum transfer from a gridworld to a planar arena.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="experiment YAML file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the master seed")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker processes for trials and beam nodes")
        p.add_argument("--out", default=None, help="override the output directory")

    p = sub.add_parser("validate-config", help="check a config and print its hash")
    common(p)
    p.set_defaults(fn=cmd_validate_config)

    p = sub.add_parser("optimize-lf", help="beam-search curricula in the gridworld")
    common(p)
    p.set_defaults(fn=cmd_optimize_lf)

    p = sub.add_parser("run-hf", help="learn the mapped curriculum in the arena")
    common(p)
    p.add_argument("--manifest", default=None,
                   help="curriculum manifest (default: <out_dir>/manifest.json)")
    p.set_defaults(fn=cmd_run_hf)

    p = sub.add_parser("eval", help="jumpstart and time-to-threshold vs a baseline")
    p.add_argument("runs", nargs="+", help="run directories to score")
    p.add_argument("--baseline", required=True, help="baseline run directory")
    p.add_argument("--out", default=None, help="where to write metrics.csv")
    p.add_argument("--jumpstart-episodes", type=int, default=100)
    p.add_argument("--delta", type=float, default=0.85)
    p.add_argument("--window", type=int, default=100)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("plot", help="render learning curves and replays as SVG")
    p.add_argument("csvs", nargs="*", help="episodes.csv files, one per method")
    p.add_argument("--replay", default=None, help="trajectory JSON to render")
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(fn=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CurricraftError, OSError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
