"""Step-response metrics, the episode runner, and report export.

Progress toward the setpoint is measured per axis relative to the initial
error ``|setpoint - omega_0|``: 0 means no correction, 1 means reached.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from atfg.dynamics import AircraftConfig
from atfg.env import AttitudeEnv, TaskConfig

AXES = ("roll", "pitch", "yaw")
SETTLE_TIME = 0.5
BAND = 0.10
Z95 = 1.96


class EvaluationError(RuntimeError):
    pass


@dataclass
class EpisodeTrace:
    """Samples at t = dt, 2 dt, ... after each step; ``omega_initial`` is the rest state."""

    dt: float
    setpoint: np.ndarray
    omega: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    omega_initial: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.setpoint = np.atleast_2d(np.asarray(self.setpoint, dtype=float))
        self.omega = np.atleast_2d(np.asarray(self.omega, dtype=float))
        n = len(self.omega)
        self.action = np.zeros((n, 4)) if self.action is None else np.asarray(self.action, dtype=float)
        self.reward = np.zeros(n) if self.reward is None else np.asarray(self.reward, dtype=float)
        self.omega_initial = np.asarray(self.omega_initial, dtype=float)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if n < 1 or not (len(self.setpoint) == len(self.action) == len(self.reward) == n):
            raise ValueError("trace series must share a length >= 1")

    @property
    def time(self) -> np.ndarray:
        return self.dt * np.arange(1, len(self.omega) + 1)

    @property
    def duration(self) -> float:
        return self.dt * len(self.omega)

    def after(self, cutoff: float = SETTLE_TIME) -> np.ndarray:
        # Half a sample of slack so t = 0.5 s itself is never counted as "after".
        return self.time > cutoff + 0.5 * self.dt

    def scaled(self, k: float) -> "EpisodeTrace":
        return EpisodeTrace(self.dt, k * self.setpoint, k * self.omega, self.action, self.reward, k * self.omega_initial)


def initial_error(trace: EpisodeTrace) -> np.ndarray:
    return np.abs(trace.setpoint[0] - trace.omega_initial)


def _progress(trace: EpisodeTrace) -> tuple[np.ndarray, np.ndarray]:
    """Signed progress per sample and axis, and the mask of axes where it is defined."""
    span = trace.setpoint[0] - trace.omega_initial
    defined = np.abs(span) > 0
    safe = np.where(defined, span, 1.0)
    return (trace.omega - trace.omega_initial) / safe, defined


def success_and_failure(trace: EpisodeTrace, band: float = BAND, cutoff: float = SETTLE_TIME):
    """Per-axis settle flags and failure percentages; NaN where undefined.

    Success means every sample after ``cutoff`` lies within ``band`` times
    the initial error of the setpoint. Successful axes report 0 % failure.
    """
    mask = trace.after(cutoff)
    if not mask.any():
        raise EvaluationError(f"trace of {trace.duration:.3f} s does not extend past {cutoff} s")
    e0 = initial_error(trace)
    err = np.abs(trace.setpoint[mask] - trace.omega[mask])
    success = np.full(3, np.nan)
    failure = np.full(3, np.nan)
    for axis in range(3):
        if e0[axis] == 0:
            continue
        ok = bool(np.all(err[:, axis] <= band * e0[axis]))
        success[axis] = float(ok)
        failure[axis] = 0.0 if ok else 100.0 * float(np.mean(err[:, axis])) / e0[axis]
    return success, failure


def rise_time(trace: EpisodeTrace, low_frac: float = 0.1, high_frac: float = 0.9) -> np.ndarray:
    """Milliseconds between first crossings of ``low_frac`` and ``high_frac`` progress."""
    if not low_frac < high_frac:
        raise ValueError("low_frac must be below high_frac")
    progress, defined = _progress(trace)
    t = np.concatenate([[0.0], trace.time])
    out = np.full(3, np.nan)
    for axis in range(3):
        if not defined[axis]:
            continue
        p = np.concatenate([[0.0], progress[:, axis]])
        t_lo = _first_crossing(t, p, low_frac)
        t_hi = _first_crossing(t, p, high_frac)
        if t_lo is not None and t_hi is not None:
            out[axis] = 1000.0 * (t_hi - t_lo)
    return out


def _first_crossing(t, p, level):
    hits = np.nonzero(p >= level)[0]
    if len(hits) == 0:
        return None
    k = hits[0]
    if k == 0:
        return t[0]
    p0, p1 = p[k - 1], p[k]
    return t[k - 1] + (level - p0) / (p1 - p0) * (t[k] - t[k - 1])


def peak_pct(trace: EpisodeTrace) -> np.ndarray:
    """Largest progress reached, in percent; above 100 is overshoot."""
    progress, defined = _progress(trace)
    return np.where(defined, 100.0 * progress.max(axis=0), np.nan)


def total_error(trace: EpisodeTrace) -> np.ndarray:
    return np.abs(trace.setpoint - trace.omega).sum(axis=0)


def stability_slope(trace: EpisodeTrace, cutoff: float = SETTLE_TIME) -> np.ndarray:
    """Least-squares slope (rad/s per s) of each axis rate after ``cutoff``."""
    mask = trace.after(cutoff)
    if mask.sum() < 2:
        raise EvaluationError("need at least 2 samples after the cutoff for a slope")
    t = trace.time[mask]
    tc = t - t.mean()
    y = trace.omega[mask]
    # Anchoring on the first sample makes a constant segment exactly flat.
    return (tc @ (y - y[0])) / (tc @ tc)


METRICS = ("success", "failure", "rise", "peak", "error", "stability")


def episode_metrics(trace: EpisodeTrace, low_frac: float = 0.1, high_frac: float = 0.9) -> dict:
    success, failure = success_and_failure(trace)
    return {
        "initial_error": initial_error(trace),
        "success": success,
        "failure": failure,
        "rise": rise_time(trace, low_frac, high_frac),
        "peak": peak_pct(trace),
        "error": total_error(trace),
        "stability": stability_slope(trace),
    }


@dataclass
class AxisStat:
    mean: list[float]
    half_width: list[float]
    count: list[int]
    undefined: list[int]


@dataclass
class MetricsReport:
    """Per-axis means with 95 % normal-approximation half-widths."""

    episodes: int
    stats: dict[str, AxisStat]
    per_episode: list[dict] = field(default_factory=list, repr=False)

    def __getitem__(self, metric: str) -> AxisStat:
        return self.stats[metric]

    def to_dict(self) -> dict:
        return {
            "schema": "atfg.metrics/1",
            "episodes": self.episodes,
            "axes": list(AXES),
            "metrics": {k: v.__dict__ for k, v in self.stats.items()},
        }


def _mean_ci(values: np.ndarray):
    n = len(values)
    if n == 0:
        return 0.0, 0.0
    mean = float(np.mean(values))
    if n == 1:
        return mean, 0.0
    return mean, float(Z95 * np.std(values, ddof=1) / math.sqrt(n))


def aggregate(per_episode: list[dict]) -> MetricsReport:
    """Reduce per-episode metrics; undefined entries are counted, never averaged.

    Failure is averaged over episodes that missed the band only, so a
    controller that always settles reports 0 with a count of 0.
    """
    if not per_episode:
        raise EvaluationError("cannot build a report from zero episodes")
    stats = {}
    for metric in METRICS:
        table = np.array([m[metric] for m in per_episode], dtype=float)
        if metric == "failure":
            succ = np.array([m["success"] for m in per_episode], dtype=float)
            table = np.where(succ == 0.0, table, np.nan)
        means, hws, counts, undefined = [], [], [], []
        for axis in range(3):
            col = table[:, axis]
            ok = col[~np.isnan(col)]
            mean, hw = _mean_ci(ok)
            means.append(mean)
            hws.append(hw)
            counts.append(int(len(ok)))
            undefined.append(int(len(col) - len(ok)))
        stats[metric] = AxisStat(means, hws, counts, undefined)
    return MetricsReport(len(per_episode), stats, per_episode)


def run_episode(agent, env) -> EpisodeTrace:
    res = env.reset()
    if hasattr(agent, "reset"):
        agent.reset()
    omega0 = np.array(res.info["omega"], dtype=float)
    sp, om, act, rew = [], [], [], []
    while not res.done:
        action = np.asarray(agent.act(res.state), dtype=float)
        res = env.step(action)
        sp.append(res.info["setpoint"])
        om.append(res.info["omega"])
        act.append(action)
        rew.append(res.reward)
    return EpisodeTrace(env.task.dt, np.array(sp), np.array(om), np.array(act), np.array(rew), omega0)


def evaluate(agent, task: TaskConfig, n_episodes: int, aircraft: AircraftConfig | None = None,
             env_factory=None, trace_dir=None, low_frac: float = 0.1, high_frac: float = 0.9):
    """Run ``n_episodes`` on the setpoint stream seeded by ``task.seed``.

    Returns ``(report, traces)``. Per-episode CSVs and a JSON-lines summary
    are written when ``trace_dir`` is given.
    """
    if n_episodes <= 0:
        raise EvaluationError("n_episodes must be positive")
    env = env_factory(task) if env_factory is not None else AttitudeEnv(task, aircraft)
    traces, per_episode = [], []
    for i in range(n_episodes):
        try:
            trace = run_episode(agent, env)
        except Exception as exc:
            raise EvaluationError(f"episode {i} failed: {exc}") from exc
        traces.append(trace)
        per_episode.append(episode_metrics(trace, low_frac, high_frac))
    report = aggregate(per_episode)
    if trace_dir is not None:
        write_traces(traces, per_episode, trace_dir)
    return report, traces


# ------------------------------------------------------------------- export

TRACE_HEADER = ["t", "target_x", "target_y", "target_z", "omega_x", "omega_y", "omega_z",
                "action_1", "action_2", "action_3", "action_4", "reward"]


def write_trace_csv(trace: EpisodeTrace, path) -> None:
    """One row per sample; the first row is the rest state at t = 0."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        w.writerow([0.0, *trace.setpoint[0], *trace.omega_initial, 0.0, 0.0, 0.0, 0.0, 0.0])
        for k in range(len(trace.omega)):
            w.writerow([repr(float(trace.time[k])), *map(repr, map(float, trace.setpoint[k])),
                        *map(repr, map(float, trace.omega[k])), *map(repr, map(float, trace.action[k])),
                        repr(float(trace.reward[k]))])


def read_trace_csv(path) -> EpisodeTrace:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    dt = float(data[1, 0] - data[0, 0])
    return EpisodeTrace(dt, data[1:, 1:4], data[1:, 4:7], data[1:, 7:11], data[1:, 11], data[0, 4:7])


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return [None if math.isnan(v) else float(v) for v in value]
    return value


def write_traces(traces, per_episode, trace_dir) -> None:
    out = Path(trace_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "episodes.jsonl", "w") as fh:
        for i, (trace, metrics) in enumerate(zip(traces, per_episode)):
            write_trace_csv(trace, out / f"episode_{i:04d}.csv")
            row = {"episode": i, "setpoint": _jsonable(trace.setpoint[0])}
            row.update({k: _jsonable(v) for k, v in metrics.items()})
            fh.write(json.dumps(row) + "\n")


def _fmt(mean, hw, digits=1):
    return f"{mean:.{digits}f}±{hw:.{digits}f}"


def format_table(reports: dict[str, MetricsReport]) -> str:
    """Aligned text table: one row per agent, metric x axis columns."""
    columns = [("success", "Success %", 100.0, 1), ("failure", "Failure %", 1.0, 1), ("rise", "Rise ms", 1.0, 1),
               ("peak", "Peak %", 1.0, 1), ("error", "Error", 1.0, 1), ("stability", "Stability", 1.0, 3)]
    header = ["Agent"] + [f"{title} {ax[0].upper()}" for _, title, _, _ in columns for ax in AXES]
    rows = []
    for name, report in reports.items():
        row = [name]
        for key, _, scale, digits in columns:
            st = report[key]
            for axis in range(3):
                row.append(_fmt(scale * st.mean[axis], scale * st.half_width[axis], digits))
        rows.append(row)
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in [header, *rows]]
    return "\n".join(lines)


def winners(reports: dict[str, MetricsReport]) -> dict[str, list[str]]:
    """Best agent per metric and axis, using each metric's natural direction."""
    pick = {
        "success": lambda st, a: -st.mean[a],
        "failure": lambda st, a: st.mean[a],
        "rise": lambda st, a: st.mean[a] if st.count[a] else math.inf,
        "peak": lambda st, a: abs(st.mean[a] - 100.0),
        "error": lambda st, a: st.mean[a],
        "stability": lambda st, a: abs(st.mean[a]),
    }
    out = {}
    for metric, key in pick.items():
        out[metric] = [min(reports, key=lambda name: key(reports[name][metric], axis)) for axis in range(3)]
    return out
