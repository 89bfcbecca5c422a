"""Exploration and episode-level performance metrics, and their CSV form."""

from dataclasses import dataclass, astuple, fields
import csv
import math

import numpy as np

from .approx import PROB_FLOOR

CSV_COLUMNS = ("episode", "success", "collision", "accumulated_reward", "avg_speed",
               "travel_distance", "avg_entropy", "effective_actions")
EVAL_WINDOW = 20


def distribution_entropy(probs) -> np.ndarray:
    """Natural-log entropy of each distribution along the last axis."""
    p = np.asarray(probs, dtype=float)
    return -np.sum(p * np.log(np.maximum(p, PROB_FLOOR)), axis=-1)


def policy_entropy_avg(distributions) -> float:
    """Mean per-step entropy of a sequence of action distributions."""
    p = np.atleast_2d(np.asarray(distributions, dtype=float))
    if p.shape[0] < 1:
        raise ValueError("need at least one step")
    return float(distribution_entropy(p).mean())


def effective_actions(h_avg: float) -> float:
    if h_avg < 0:
        raise ValueError("entropy must be non-negative")
    return math.exp(h_avg)


@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    success: bool
    collision: bool
    accumulated_reward: float
    avg_speed: float
    travel_distance: float
    avg_entropy: float
    effective_actions: float

    def __post_init__(self):
        if self.travel_distance < 0:
            raise ValueError("travel distance cannot be negative")

    @classmethod
    def from_distributions(cls, episode, success, collision, accumulated_reward, avg_speed,
                           travel_distance, distributions) -> "EpisodeRecord":
        h = policy_entropy_avg(distributions)
        return cls(int(episode), bool(success), bool(collision), float(accumulated_reward),
                   float(avg_speed), float(travel_distance), h, effective_actions(h))

    def row(self) -> list:
        out = []
        for v in astuple(self):
            if isinstance(v, bool):
                out.append(int(v))
            elif isinstance(v, float):
                out.append(repr(v))
            else:
                out.append(v)
        return out


@dataclass(frozen=True)
class Summary:
    """Mean and standard deviation of each metric; rates in percent."""

    episodes: int
    success_rate: float
    success_std: float
    collision_rate: float
    collision_std: float
    reward_mean: float
    reward_std: float
    speed_mean: float
    speed_std: float
    distance_mean: float
    distance_std: float
    entropy_mean: float
    effective_actions_mean: float

    def table_row(self, label: str) -> str:
        return (f"{label:<24} success {self.success_rate:6.1f} +- {self.success_std:5.1f}  "
                f"reward {self.reward_mean:8.2f} +- {self.reward_std:6.2f}  "
                f"speed {self.speed_mean:6.2f} +- {self.speed_std:5.2f}  "
                f"distance {self.distance_mean:8.1f} +- {self.distance_std:6.1f}  "
                f"collision {self.collision_rate:6.1f} +- {self.collision_std:5.1f}")


def summarize(records) -> Summary:
    records = list(records)
    if not records:
        raise ValueError("no records to summarize")
    col = {f.name: np.array([getattr(r, f.name) for r in records], dtype=float)
           for f in fields(EpisodeRecord)}
    return Summary(
        len(records),
        100.0 * col["success"].mean(), 100.0 * col["success"].std(),
        100.0 * col["collision"].mean(), 100.0 * col["collision"].std(),
        col["accumulated_reward"].mean(), col["accumulated_reward"].std(),
        col["avg_speed"].mean(), col["avg_speed"].std(),
        col["travel_distance"].mean(), col["travel_distance"].std(),
        col["avg_entropy"].mean(), col["effective_actions"].mean(),
    )


def aggregate_run(records, window: int = EVAL_WINDOW) -> list[Summary]:
    """Summaries over consecutive windows of ``window`` records (last may be short)."""
    records = list(records)
    if not records:
        raise ValueError("no records to aggregate")
    if window < 1:
        raise ValueError("window must be positive")
    return [summarize(records[i:i + window]) for i in range(0, len(records), window)]


class MetricsWriter:
    """Append-only per-episode CSV, flushed after every row."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", newline="", encoding="utf-8")
        self._csv = csv.writer(self._fh, lineterminator="\n")
        self._csv.writerow(CSV_COLUMNS)
        self._fh.flush()

    def write(self, record: EpisodeRecord) -> None:
        self._csv.writerow(record.row())
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_metrics_csv(records, path) -> None:
    with MetricsWriter(path) as w:
        for r in records:
            w.write(r)


def read_metrics_csv(path) -> list[EpisodeRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [EpisodeRecord(int(r["episode"]), r["success"] == "1", r["collision"] == "1",
                              float(r["accumulated_reward"]), float(r["avg_speed"]),
                              float(r["travel_distance"]), float(r["avg_entropy"]),
                              float(r["effective_actions"])) for r in reader]
