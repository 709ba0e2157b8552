"""Pipeline orchestration: seeds, manifests, CSV schemas, CLI exit codes."""

import json
from pathlib import Path

import numpy as np
import pytest

from curricraft import kernels as K
from curricraft.agents import MlpParams
from curricraft.cli import main
from curricraft.config import resolve_config
from curricraft.errors import ValidationError
from curricraft.metrics import read_metrics_csv
from curricraft.params import HF, GoalSpec, TaskParams
from curricraft.plotting import (
    record_trajectory,
    render_curves_svg,
    render_replay_svg,
)
from curricraft.runner import (
    EPISODE_COLUMNS,
    load_run_curves,
    manifest_doc,
    optimize_lf_trials,
    parse_manifest,
    read_episode_rows,
    read_json,
    trial_seed,
)

TINY = {
    "mode": "ac", "trials": 2, "master_seed": 0,
    "hf_target": {"width": 1.6, "height": 1.6, "trees": 2, "rocks": 1,
                  "tables": 1},
    "lf_ranges": {"width": [4, 4], "height": [4, 4], "trees": [0, 2],
                  "rocks": [0, 1], "tables": [0, 1], "wood": [0, 2],
                  "stone": [0, 1], "fires": [0, 0]},
    "beam": {"width_w": 1, "branch_n": 2, "length_u": 3},
    "stop_lf": {"window_s": 2, "budget_b": 3},
    "stop_hf": {"window_s": 2, "budget_b": 3},
    "agent_lf": {"hidden": 8},
    "agent_hf": {"hidden": 8},
}

SCRATCH = {
    "mode": "scratch", "trials": 2, "master_seed": 0,
    "hf_target": TINY["hf_target"],
    "stop_hf": {"window_s": 2, "budget_b": 3},
    "agent_hf": {"hidden": 8},
}


def write_yaml(path: Path, doc: dict) -> Path:
    path.write_text(json.dumps(doc))  # JSON is a YAML subset
    return path


def tiny_cfg(**over):
    raw = json.loads(json.dumps(TINY))
    raw.update(over)
    return resolve_config(raw)


# ---------------------------------------------------------------------------
# Seeds and manifests
# ---------------------------------------------------------------------------

def test_trial_seed_is_stable_and_collision_free():
    assert trial_seed(0, 0) == trial_seed(0, 0)
    seeds = {trial_seed(m, t) for m in range(3) for t in range(4)}
    assert len(seeds) == 12


def test_manifest_roundtrips_through_json():
    cfg = tiny_cfg(trials=1)
    entries = optimize_lf_trials(cfg)
    doc = manifest_doc(cfg, entries)
    back = parse_manifest(json.loads(json.dumps(doc)), cfg.trials)
    for before, after in zip(entries, back):
        assert after["trial"] == before["trial"]
        assert after["seed"] == before["seed"]
        assert after["curriculum"].tasks == before["curriculum"].tasks
        assert after["curriculum"].episodes == before["curriculum"].episodes
        assert after["curriculum"].timesteps == before["curriculum"].timesteps
        assert (after["curriculum"].total_lf_timesteps
                == before["curriculum"].total_lf_timesteps)


def test_parse_manifest_rejects_bad_docs():
    cfg = tiny_cfg(trials=1)
    doc = manifest_doc(cfg, optimize_lf_trials(cfg))
    with pytest.raises(ValidationError, match="schema"):
        parse_manifest({"schema": "something-else", "trials": []}, 1)
    with pytest.raises(ValidationError, match="asks for 5"):
        parse_manifest(doc, 5)


# ---------------------------------------------------------------------------
# Episode CSV schema
# ---------------------------------------------------------------------------

GOOD_HEADER = ("# episodes-csv v1 config_hash=h1 master_seed=0 mode=ac\n"
               + ",".join(EPISODE_COLUMNS) + "\n")


def test_read_episode_rows_names_the_offending_line(tmp_path):
    path = tmp_path / "episodes.csv"

    path.write_text("not a header\n")
    with pytest.raises(ValidationError, match=":1:"):
        read_episode_rows(path)

    path.write_text("# episodes-csv v1 config_hash=h1 master_seed=0\nbad,cols\n")
    with pytest.raises(ValidationError, match=":2:"):
        read_episode_rows(path)

    path.write_text(GOOD_HEADER + "0,0,0,5,1.0,1\n0,0\n")
    with pytest.raises(ValidationError, match=":4:"):
        read_episode_rows(path)

    path.write_text(GOOD_HEADER + "0,0,0,five,1.0,1\n")
    with pytest.raises(ValidationError, match=":3:"):
        read_episode_rows(path)


def test_read_episode_rows_parses_meta_and_types(tmp_path):
    path = tmp_path / "episodes.csv"
    path.write_text(GOOD_HEADER + "0,0,0,5,-1.5,0\n0,1,0,9,2.0,1\n")
    meta, rows = read_episode_rows(path)
    assert meta == {"config_hash": "h1", "master_seed": "0", "mode": "ac"}
    assert rows == [(0, 0, 0, 5, -1.5, False), (0, 1, 0, 9, 2.0, True)]


def fake_run_dir(tmp_path, hash_csv="h1", hash_json="h1"):
    header = (f"# episodes-csv v1 config_hash={hash_csv} master_seed=0 mode=ac\n"
              + ",".join(EPISODE_COLUMNS) + "\n")
    rows = "0,0,0,10,-1.0,0\n0,1,0,25,2.0,1\n0,1,1,30,3.0,1\n"
    (tmp_path / "episodes.csv").write_text(header + rows)
    summary = {"schema": "run-summary", "version": 1, "config_hash": hash_json,
               "master_seed": 0, "mode": "ac", "noisy": False,
               "kernel_backend": "x",
               "trials": [{"trial": 0, "seed": 7, "lf_sunk_timesteps": 4,
                           "hf_source_timesteps": 10, "target_episodes": 2,
                           "target_timesteps": 11, "target_converged": True,
                           "total_timesteps": 30, "curriculum": []}]}
    (tmp_path / "run.json").write_text(json.dumps(summary))
    return tmp_path


def test_load_run_curves_rebuilds_the_target_curve(tmp_path):
    data = load_run_curves(fake_run_dir(tmp_path))
    curve = data["curves"][0]
    assert curve.sunk_cost_timesteps == 14  # lf sunk + hf source tasks
    assert curve.points == ((11, 2.0, True), (16, 3.0, True))
    assert curve.total_timesteps(1) == 30  # wall clock, csv column restored
    assert data["converged"] == {0: True}


def test_load_run_curves_rejects_hash_mismatch(tmp_path):
    fake_run_dir(tmp_path, hash_csv="h1", hash_json="h2")
    with pytest.raises(ValidationError, match="config hash"):
        load_run_curves(tmp_path)


# ---------------------------------------------------------------------------
# SVG rendering
# ---------------------------------------------------------------------------

def test_render_curves_svg_is_byte_stable():
    grid = np.array([0, 10, 20], dtype=np.int64)
    series = [{"label": "ac", "x": grid, "mean": np.array([0.0, 1.0, 2.0]),
               "sd": np.array([0.0, 0.5, 0.25])},
              {"label": "scratch", "x": grid,
               "mean": np.array([-1.0, -0.5, 1.75]),
               "sd": np.array([0.1, 0.1, 0.1])}]
    one = render_curves_svg(series, "cafe0123", 7)
    two = render_curves_svg([dict(s) for s in series], "cafe0123", 7)
    assert one == two
    assert one.lstrip().startswith("<svg")
    assert "cafe0123" in one and "ac" in one and "scratch" in one


def test_record_trajectory_is_deterministic_and_renders():
    task = TaskParams(1.6, 1.6, 2, 1, 1, 0, 0, 0, goal=GoalSpec.craft())
    policy = MlpParams.init(np.random.default_rng(3), K.HF_OBS_DIM, hidden=8)
    one = record_trajectory(HF, task, policy, seed=11, shaping=False)
    two = record_trajectory(HF, task, policy, seed=11, shaping=False)
    assert one == two
    assert one["fidelity"] == HF
    assert len(one["path"]) == len(one["actions"]) + 1
    svg_a = render_replay_svg(one, "cafe0123", 11)
    svg_b = render_replay_svg(json.loads(json.dumps(two)), "cafe0123", 11)
    assert svg_a == svg_b
    assert svg_a.lstrip().startswith("<svg")


# ---------------------------------------------------------------------------
# CLI pipeline end to end
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    ac_dir, scratch_dir = root / "ac", root / "scratch"
    ac_yaml = write_yaml(root / "ac.yaml", {**TINY, "out_dir": str(ac_dir)})
    scratch_yaml = write_yaml(root / "scratch.yaml",
                              {**SCRATCH, "out_dir": str(scratch_dir)})

    assert main(["validate-config", "--config", str(ac_yaml)]) == 0
    assert main(["optimize-lf", "--config", str(ac_yaml)]) == 0
    assert main(["run-hf", "--config", str(ac_yaml)]) == 0
    assert main(["run-hf", "--config", str(scratch_yaml)]) == 0
    assert main(["eval", str(ac_dir), "--baseline", str(scratch_dir),
                 "--jumpstart-episodes", "2", "--window", "2",
                 "--out", str(root / "metrics")]) == 0
    assert main(["plot", str(ac_dir / "episodes.csv"),
                 str(scratch_dir / "episodes.csv"),
                 "--replay", str(ac_dir / "trajectory.json"),
                 "--out", str(root / "plots")]) == 0
    return root


def test_pipeline_writes_every_artifact(pipeline):
    expected = [
        "ac/config.resolved.json", "ac/manifest.json", "ac/lf_episodes.csv",
        "ac/episodes.csv", "ac/run.json", "ac/trajectory.json",
        "ac/policy-trial00.json", "ac/policy-trial01.json",
        "scratch/episodes.csv", "scratch/run.json",
        "metrics/metrics.csv", "plots/curves.svg", "plots/replay.svg",
    ]
    for rel in expected:
        assert (pipeline / rel).exists(), rel


def test_pipeline_run_dirs_load_cleanly(pipeline):
    for sub in ("ac", "scratch"):
        data = load_run_curves(pipeline / sub)
        assert sorted(data["curves"]) == [0, 1]
        for curve in data["curves"].values():
            steps = [curve.points[i][0] for i in range(len(curve))]
            assert steps == sorted(steps)
    ac = load_run_curves(pipeline / "ac")
    assert all(c.sunk_cost_timesteps > 0 for c in ac["curves"].values())
    summary = read_json(pipeline / "ac" / "run.json")
    manifest = read_json(pipeline / "ac" / "manifest.json")
    assert summary["config_hash"] == manifest["config_hash"]


def test_eval_scores_every_method_and_trial(pipeline):
    rows, meta = read_metrics_csv(pipeline / "metrics" / "metrics.csv")
    methods = {r.method for r in rows}
    assert methods == {"ac", "scratch"}
    assert len(rows) == 4  # 2 methods x 2 trials, baseline scores itself
    scratch_rows = [r for r in rows if r.method == "scratch"]
    assert all(r.jumpstart == 0.0 for r in scratch_rows)
    assert all(r.sunk_cost == 0 for r in scratch_rows)
    base_summary = read_json(pipeline / "scratch" / "run.json")
    assert meta["config_hash"] == base_summary["config_hash"]


def test_plot_svgs_are_wellformed(pipeline):
    for name in ("curves.svg", "replay.svg"):
        text = (pipeline / "plots" / name).read_text()
        assert text.lstrip().startswith("<svg")
        assert text.rstrip().endswith("</svg>")


def test_worker_count_leaves_artifacts_byte_identical(tmp_path):
    outputs = {}
    for jobs, sub in ((1, "j1"), (2, "j2")):
        out_dir = tmp_path / sub
        ypath = write_yaml(tmp_path / f"{sub}.yaml",
                           {**TINY, "out_dir": str(out_dir)})
        assert main(["optimize-lf", "--config", str(ypath),
                     "--jobs", str(jobs)]) == 0
        assert main(["run-hf", "--config", str(ypath),
                     "--jobs", str(jobs)]) == 0
        outputs[sub] = out_dir
    for name in ("manifest.json", "lf_episodes.csv", "episodes.csv",
                 "run.json", "trajectory.json"):
        assert ((outputs["j1"] / name).read_bytes()
                == (outputs["j2"] / name).read_bytes()), name


def test_cli_exit_codes(tmp_path):
    assert main(["validate-config", "--config", str(tmp_path / "nope.yaml")]) == 2

    bad = write_yaml(tmp_path / "bad.yaml", {"mode": "warp"})
    assert main(["validate-config", "--config", str(bad)]) == 2

    scratch = write_yaml(tmp_path / "scratch.yaml",
                         {**SCRATCH, "out_dir": str(tmp_path / "s")})
    assert main(["optimize-lf", "--config", str(scratch)]) == 2

    # ac run without a manifest on disk is a runtime failure, not a config one
    ac = write_yaml(tmp_path / "ac.yaml", {**TINY, "out_dir": str(tmp_path / "a")})
    assert main(["run-hf", "--config", str(ac)]) == 3

    assert main(["plot", "--out", str(tmp_path)]) == 2


def test_cli_seed_override_changes_the_run(tmp_path):
    base = write_yaml(tmp_path / "b.yaml", {**TINY, "trials": 1,
                                            "out_dir": str(tmp_path / "b")})
    other = write_yaml(tmp_path / "o.yaml", {**TINY, "trials": 1,
                                             "out_dir": str(tmp_path / "o")})
    assert main(["optimize-lf", "--config", str(base)]) == 0
    assert main(["optimize-lf", "--config", str(other), "--seed", "123"]) == 0
    a = read_json(tmp_path / "b" / "manifest.json")
    b = read_json(tmp_path / "o" / "manifest.json")
    assert a["master_seed"] == 0 and b["master_seed"] == 123
    assert a["config_hash"] != b["config_hash"]
