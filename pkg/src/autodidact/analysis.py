"""Post-hoc analyses over score tables, run logs and checkpoints.

Every function returns plain rows (lists of dicts) so the CLI can write
them out as CSV.
"""
from __future__ import annotations

import csv
import io
import statistics
import warnings
from dataclasses import dataclass
from importlib import resources
from typing import Callable

import numpy as np

from .envs import TabularEnv, true_values
from .returns import lambda_weight_vector
from .runlog import RunLog

METHODS = ("CARA3C", "LRA3C")


@dataclass
class ScoreRow:
    task: str
    car: float
    lr: float
    a3c: float

    def score(self, method: str) -> float:
        return self.car if method == "CARA3C" else self.lr


@dataclass
class ScoreTable:
    rows: list[ScoreRow]

    def usable_rows(self) -> list[ScoreRow]:
        usable = []
        for row in self.rows:
            if row.a3c == 0:
                warnings.warn(f"{row.task}: A3C score is 0; row excluded from ratios")
                continue
            usable.append(row)
        return usable


def load_score_table(path=None) -> ScoreTable:
    """Read a ``task,CARA3C,LRA3C,A3C`` CSV; defaults to the shipped Atari table."""
    if path is None:
        text = resources.files("autodidact").joinpath("data/atari_scores.csv").read_text()
    else:
        with open(path) as f:
            text = f.read()
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        try:
            row = ScoreRow(rec["task"], float(rec["CARA3C"]), float(rec["LRA3C"]), float(rec["A3C"]))
        except (KeyError, TypeError) as exc:
            raise ValueError("score table needs columns task,CARA3C,LRA3C,A3C") from exc
        if not all(np.isfinite([row.car, row.lr, row.a3c])):
            raise ValueError(f"{row.task}: scores must be finite")
        rows.append(row)
    return ScoreTable(rows)


def normalized_scores(table: ScoreTable) -> dict[str, tuple[float, float]]:
    """Mean and median of method/A3C score ratios, per method."""
    rows = table.usable_rows()
    if not rows:
        raise ValueError("no rows with a non-zero A3C score")
    out = {}
    for method in METHODS:
        ratios = [row.score(method) / row.a3c for row in rows]
        out[method] = (statistics.fmean(ratios), statistics.median(ratios))
    return out


def percent_improvement(table: ScoreTable) -> list[dict]:
    return [{"task": row.task,
             **{m: 100.0 * (row.score(m) - row.a3c) / row.a3c for m in METHODS}}
            for row in table.usable_rows()]


def _eval_traces(log: RunLog) -> list[dict]:
    return [r["payload"] for r in log.of_type("eval_trace")]


def _pick_trace(log: RunLog, episode_index: int | None) -> dict:
    traces = _eval_traces(log)
    if not traces:
        raise ValueError("run log has no evaluation-episode traces")
    if episode_index is None:
        return traces[-1]
    for t in traces:
        if t["episode_index"] == episode_index:
            return t
    valid = [t["episode_index"] for t in traces]
    raise ValueError(f"episode {episode_index} not found; valid episode indices: "
                     f"{min(valid)}..{max(valid)} ({valid})")


def weight_diff_trace(log_car: RunLog, log_lr: RunLog, lam: float,
                      episode_index: int | None = None) -> list[dict]:
    """Per evaluation step, CAR weights minus lambda-return weights for each n.

    Both agents' traces are aligned by step index within their evaluation
    episode; the LR weights are the analytic lambda weights of the same
    length as the CAR row. Rows are padded with zeros up to the window.
    """
    car = _pick_trace(log_car, episode_index)
    lr = _pick_trace(log_lr, episode_index)
    if "weights" not in car or not car["weights"]:
        raise ValueError("CAR log has no weight rows")
    steps = min(len(car["weights"]), len(lr["confidence"]))
    window = max(len(w) for w in car["weights"])
    rows = []
    for t in range(steps):
        w = np.asarray(car["weights"][t])
        diff = np.zeros(window)
        diff[:len(w)] = w - lambda_weight_vector(len(w), lam)
        rows.append({"step": t, "available": len(w),
                     **{f"n{n + 1}": float(diff[n]) for n in range(window)}})
    return rows


@dataclass
class HeatmapGrid:
    x_width: float
    y_width: float
    counts: np.ndarray
    conf_sum: np.ndarray
    abs_change_sum: np.ndarray

    @property
    def mean_confidence(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, self.conf_sum / np.maximum(self.counts, 1), np.nan)

    def rows(self) -> list[dict]:
        out = []
        mean = self.mean_confidence
        for x, y in zip(*np.nonzero(self.counts)):
            n = int(self.counts[x, y])
            out.append({"x_bin": int(x), "y_bin": int(y),
                        "pct_change_lo": x * self.x_width, "pct_change_hi": (x + 1) * self.x_width,
                        "step_lo": y * self.y_width, "step_hi": (y + 1) * self.y_width,
                        "count": n, "mean_confidence": float(mean[x, y]),
                        "mean_abs_change": float(self.abs_change_sum[x, y] / n)})
        return out


def percent_change(before: float, after: float, floor: float = 1e-8) -> float:
    return 100.0 * abs(after - before) / max(abs(before), floor)


def confidence_value_change_bins(log: RunLog, x_bins: int = 100, y_bins: int = 100,
                                 x_width: float = 1.0, y_width: float | None = None) -> HeatmapGrid:
    """Mean confidence per (percent value change, training progress) cell.

    Values beyond the last bin are clamped into it, so every record lands
    in exactly one cell.
    """
    if y_width is None:
        cfg = log.config or {}
        y_width = max(cfg.get("total_steps", 100) / 100.0, 1.0)
    counts = np.zeros((x_bins, y_bins), dtype=np.int64)
    conf_sum = np.zeros((x_bins, y_bins))
    abs_sum = np.zeros((x_bins, y_bins))
    for rec in log.of_type("value_change"):
        p = rec["payload"]
        y = min(int(rec["global_step"] // y_width), y_bins - 1)
        for c, vb, va in zip(p["confidence"], p["value_before"], p["value_after"]):
            x = min(int(percent_change(vb, va) // x_width), x_bins - 1)
            counts[x, y] += 1
            conf_sum[x, y] += c
            abs_sum[x, y] += abs(va - vb)
    return HeatmapGrid(x_width, y_width, counts, conf_sum, abs_sum)


def value_error_curve(env: TabularEnv, value_fn: Callable[[np.ndarray], np.ndarray],
                      policy_fn: Callable[[np.ndarray], np.ndarray], gamma: float,
                      episodes: int = 10, seed: int = 0, step_cap: int = 20_000,
                      dp_truth: bool = False) -> list[dict]:
    """Squared error of V(s_t) against the discounted return from t, averaged per timestep.

    ``value_fn`` and ``policy_fn`` map a batch of observations to values and
    action distributions. With ``dp_truth`` the reference is the exact value
    of the acting policy instead of the sampled return. Timesteps reached
    by fewer episodes average over the episodes that reach them.
    """
    rng = np.random.default_rng(seed)
    truth = None
    if dp_truth:
        table = np.asarray(policy_fn(env.all_observations()), dtype=np.float64)
        truth = true_values(env, table / table.sum(axis=1, keepdims=True), gamma)
    sums: list[float] = []
    counts: list[int] = []
    for _ in range(episodes):
        obs = env.reset(int(rng.integers(2**31)))
        observations, states, rewards = [], [], []
        for _ in range(step_cap):
            p = np.asarray(policy_fn(obs[None, :]))[0]
            a = min(int(np.searchsorted(np.cumsum(p), rng.random(), side="right")), len(p) - 1)
            observations.append(obs)
            states.append(env.state)
            res = env.step(a)
            rewards.append(res.reward)
            obs = res.observation
            if res.done:
                break
        values = np.asarray(value_fn(np.array(observations)), dtype=np.float64)
        if dp_truth:
            ref = np.array([truth[s] for s in states])
        else:
            ref = np.zeros(len(rewards))
            acc = 0.0
            for t in range(len(rewards) - 1, -1, -1):
                acc = rewards[t] + gamma * acc
                ref[t] = acc
        err = (values - ref) ** 2
        for t, e in enumerate(err):
            if t == len(sums):
                sums.append(0.0)
                counts.append(0)
            sums[t] += float(e)
            counts[t] += 1
    return [{"t": t, "mse": s / n, "episodes": n} for t, (s, n) in enumerate(zip(sums, counts))]


def confidence_trace(log: RunLog, episode_index: int) -> list[dict]:
    trace = _pick_trace(log, episode_index)
    return [{"step": t, "confidence": c, "value": v, "reward": r}
            for t, (c, v, r) in enumerate(zip(trace["confidence"], trace["value"], trace["reward"]))]


def write_csv(rows: list[dict], out, header: list[str] | None = None):
    """Write rows to a path or an open text stream."""
    header = header or (list(rows[0]) if rows else [])
    if hasattr(out, "write"):
        writer = csv.DictWriter(out, fieldnames=header)
        writer.writeheader()
        writer.writerows(rows)
        return
    with open(out, "w", newline="") as f:
        write_csv(rows, f, header)
