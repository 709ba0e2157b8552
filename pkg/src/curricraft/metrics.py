"""Transfer evaluation: jumpstart, time-to-threshold, trial aggregation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .curriculum import RunLogs
from .errors import InsufficientEpisodes, ValidationError

# Sentinel for a curve that never meets the threshold within its episodes.
NOT_REACHED = None

JUMPSTART_EPISODES = 100
THRESHOLD_MODES = ("success-rate", "mean-return")

METRICS_CSV_SCHEMA = "metrics-csv"
METRICS_CSV_VERSION = 1
METRICS_COLUMNS = ("method", "trial", "jumpstart", "time_to_threshold",
                   "sunk_cost", "converged")


@dataclass(frozen=True)
class LearningCurve:
    """Per-episode target-task results plus the timesteps spent to get there.

    Each point is (cumulative_timesteps, return, success) with timesteps
    counted within the target task only; sunk_cost_timesteps holds the
    curriculum spend (LF search plus HF source tasks) that offsets the
    curve on a shared wall-clock axis.
    """

    points: tuple[tuple[int, float, bool], ...]
    sunk_cost_timesteps: int = 0

    def __post_init__(self) -> None:
        pts = tuple((int(t), float(g), bool(s)) for t, g, s in self.points)
        object.__setattr__(self, "points", pts)
        if not pts:
            raise ValidationError("a learning curve needs at least one episode")
        steps = [p[0] for p in pts]
        if any(b <= a for a, b in zip(steps, steps[1:])) or steps[0] <= 0:
            raise ValidationError("cumulative timesteps must be strictly increasing")
        if not all(np.isfinite(p[1]) for p in pts):
            raise ValidationError("returns must be finite")
        if self.sunk_cost_timesteps < 0:
            raise ValidationError("sunk cost cannot be negative")
        object.__setattr__(self, "sunk_cost_timesteps", int(self.sunk_cost_timesteps))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def returns(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    @property
    def successes(self) -> np.ndarray:
        return np.array([p[2] for p in self.points])

    def total_timesteps(self, episode: int) -> int:
        """Wall-clock position of an episode: sunk cost plus task steps."""
        return self.sunk_cost_timesteps + self.points[episode][0]

    @classmethod
    def from_episodes(cls, returns, successes, lengths,
                      sunk_cost: int = 0) -> "LearningCurve":
        if not (len(returns) == len(successes) == len(lengths)):
            raise ValidationError("per-episode lists must have equal length")
        cum = np.cumsum(np.asarray(lengths, dtype=np.int64))
        pts = tuple(zip(cum.tolist(), returns, successes))
        return cls(points=pts, sunk_cost_timesteps=sunk_cost)


def curve_from_run(run: RunLogs) -> LearningCurve:
    """Target-task curve of a pipeline run, sunk cost folded in 1:1."""
    log = run.target_log
    sunk = run.lf_sunk_timesteps + run.hf_source_timesteps
    return LearningCurve.from_episodes(log.returns, log.successes,
                                       log.lengths, sunk_cost=sunk)


def jumpstart(curve_c: LearningCurve, curve_b: LearningCurve,
              d: int = JUMPSTART_EPISODES) -> float:
    """Mean return advantage of curve_c over curve_b on the first d episodes."""
    if d < 1:
        raise ValidationError("jumpstart needs at least one episode")
    if len(curve_c) < d or len(curve_b) < d:
        raise InsufficientEpisodes(
            f"jumpstart over {d} episodes needs both curves that long "
            f"(got {len(curve_c)} and {len(curve_b)})")
    diff = curve_c.returns[:d] - curve_b.returns[:d]
    return float(diff.mean())


def time_to_threshold(curve: LearningCurve, delta: float = 0.85,
                      window: int = 100, mode: str = "success-rate"):
    """First total timestep where the trailing-window criterion holds.

    Returns NOT_REACHED when no window qualifies, including curves shorter
    than the window itself.
    """
    if mode not in THRESHOLD_MODES:
        raise ValidationError(f"threshold mode must be one of {THRESHOLD_MODES}")
    if window < 1:
        raise ValidationError("window must be positive")
    series = curve.successes.astype(float) if mode == "success-rate" else curve.returns
    for i in range(window - 1, len(series)):
        if series[i - window + 1:i + 1].mean() >= delta:
            return curve.total_timesteps(i)
    return NOT_REACHED


def _resample(curve: LearningCurve, grid: np.ndarray) -> np.ndarray:
    """Piecewise-constant values on the grid; pre-offset fill is the worst return."""
    xs = np.array([curve.total_timesteps(i) for i in range(len(curve))])
    returns = curve.returns
    idx = np.searchsorted(xs, grid, side="right") - 1
    out = np.where(idx >= 0, returns[np.clip(idx, 0, None)], returns.min())
    return out


def aggregate_trials(curves, grid):
    """Mean and sample SD of the curves resampled onto shared checkpoints."""
    if len(curves) < 2:
        raise ValidationError("aggregation needs at least two trials")
    grid = np.asarray(grid, dtype=np.int64)
    if grid.ndim != 1 or len(grid) == 0:
        raise ValidationError("grid must be a non-empty 1-d checkpoint list")
    stacked = np.stack([_resample(c, grid) for c in curves])
    return stacked.mean(axis=0), stacked.std(axis=0, ddof=1)


@dataclass(frozen=True)
class MetricsRow:
    """One method/trial line of the comparison CSV.

    jumpstart is None when the trial had too few episodes to score it;
    time_to_threshold is None when the threshold was never met. Both
    serialize as empty fields.
    """

    method: str
    trial: int
    jumpstart: float | None
    time_to_threshold: int | None
    sunk_cost: int
    converged: bool

    def as_record(self) -> list:
        js = "" if self.jumpstart is None else repr(float(self.jumpstart))
        ttt = "" if self.time_to_threshold is NOT_REACHED else int(self.time_to_threshold)
        return [self.method, self.trial, js, ttt, self.sunk_cost,
                int(self.converged)]


def write_metrics_csv(path, rows, config_hash: str, master_seed: int) -> None:
    """One comparison CSV; NOT_REACHED serializes as an empty field."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# {METRICS_CSV_SCHEMA} v{METRICS_CSV_VERSION} "
                 f"config_hash={config_hash} master_seed={master_seed}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow(row.as_record())


def read_metrics_csv(path):
    """Rows back from write_metrics_csv, plus the metadata line fields."""
    path = Path(path)
    with path.open() as fh:
        meta_line = fh.readline().strip()
        if not meta_line.startswith(f"# {METRICS_CSV_SCHEMA} v"):
            raise ValidationError(f"{path}: missing metrics schema header")
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != METRICS_COLUMNS:
            raise ValidationError(f"{path}: unexpected columns {header}")
        rows = []
        for rec in reader:
            rows.append(MetricsRow(
                method=rec[0], trial=int(rec[1]),
                jumpstart=None if rec[2] == "" else float(rec[2]),
                time_to_threshold=NOT_REACHED if rec[3] == "" else int(rec[3]),
                sunk_cost=int(rec[4]), converged=bool(int(rec[5]))))
    meta = dict(part.split("=", 1) for part in meta_line.split()[3:])
    return rows, meta
