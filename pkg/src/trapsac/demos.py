"""Demonstration data: collection, storage format, mixed replay and demo losses."""

from dataclasses import dataclass, field
import csv
import struct
import warnings

import numpy as np

from .dynamics import N_ACTIONS
from .env import OBS_DIM, ScenarioConfig, TrapEnv
from .heuristic import StochasticRulePolicy
from .sac import Batch, margin_terms
from .seeding import episode_seed, stream

REWARD_BONUS = 2.0
DEMO_EPISODES = 200
BETA_INIT = 0.6
BETA_HORIZON = 1000

MAGIC = b"TRAPDEMO"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIIIIIId")  # magic, version, obs_dim, count, episodes, successes, augmented, bonus


class DemoFormatError(ValueError):
    pass


class ReplayConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool
    is_demo: bool = False
    rule_a: int = -1

    def __post_init__(self):
        if not 0 <= int(self.a) < N_ACTIONS:
            raise ValueError(f"action {self.a} outside [0, {N_ACTIONS - 1}]")
        if not np.isfinite(self.r):
            raise ValueError("reward must be finite")


def _record_dtype(obs_dim: int) -> np.dtype:
    return np.dtype([
        ("length", "<u4"), ("s", "<f8", (obs_dim,)), ("a", "<i4"), ("r", "<f8"),
        ("s2", "<f8", (obs_dim,)), ("done", "u1"), ("is_demo", "u1"), ("rule_a", "<i4"),
    ])


def augment_reward(r, bonus: float = REWARD_BONUS):
    return r + bonus


# -- demonstration store ---------------------------------------------------

@dataclass
class DemoDataset:
    """Immutable-by-convention store of demonstration transitions.

    ``rule_a`` is the deterministic rule action in ``s``; ``a`` may differ
    when the stochastic demonstrator drew an off-rule action.
    """

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray
    rule_a: np.ndarray
    episode_success: list = field(default_factory=list)
    augmented: bool = False
    bonus: float = 0.0

    def __len__(self):
        return self.a.shape[0]

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.episode_success)) if self.episode_success else float("nan")

    def with_reward_bonus(self, bonus: float = REWARD_BONUS) -> "DemoDataset":
        """Copy with ``bonus`` added to every reward; refuses a second application."""
        if self.augmented:
            raise ReplayConfigError("demo rewards are already augmented")
        return DemoDataset(self.s, self.a, augment_reward(self.r, bonus), self.s2, self.done,
                           self.rule_a, list(self.episode_success), True, float(bonus))

    def save(self, path) -> None:
        rec = np.zeros(len(self), dtype=_record_dtype(self.s.shape[1]))
        rec["length"] = rec.dtype.itemsize - 4
        rec["s"], rec["a"], rec["r"] = self.s, self.a, self.r
        rec["s2"], rec["done"], rec["rule_a"] = self.s2, self.done, self.rule_a
        rec["is_demo"] = 1
        successes = sum(bool(x) for x in self.episode_success)
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, self.s.shape[1], len(self),
                                  len(self.episode_success), successes, int(self.augmented),
                                  self.bonus))
            fh.write(np.asarray(self.episode_success, dtype=np.uint8).tobytes())
            fh.write(rec.tobytes())

    @classmethod
    def load(cls, path) -> "DemoDataset":
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) < _HEADER.size or raw[:8] != MAGIC:
            raise DemoFormatError(f"{path}: not a demonstration file")
        magic, version, obs_dim, count, episodes, successes, augmented, bonus = \
            _HEADER.unpack_from(raw)
        if version != FORMAT_VERSION:
            raise DemoFormatError(f"{path}: unsupported format version {version}")
        off = _HEADER.size
        flags = np.frombuffer(raw, np.uint8, episodes, off).astype(bool)
        off += episodes
        dtype = _record_dtype(obs_dim)
        if len(raw) - off != count * dtype.itemsize:
            raise DemoFormatError(f"{path}: truncated or oversized record block")
        rec = np.frombuffer(raw, dtype, count, off)
        if np.any(rec["length"] != dtype.itemsize - 4) or int(flags.sum()) != successes:
            raise DemoFormatError(f"{path}: corrupt records")
        return cls(rec["s"].copy(), rec["a"].astype(np.int64), rec["r"].copy(),
                   rec["s2"].copy(), rec["done"].astype(bool), rec["rule_a"].astype(np.int64),
                   [bool(x) for x in flags], bool(augmented), float(bonus))

    def to_csv(self, path) -> None:
        d = self.s.shape[1]
        header = (["a", "r"] + [f"s{i}" for i in range(d)] + [f"s_next{i}" for i in range(d)]
                  + ["done", "is_demo", "rule_a"])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k in range(len(self)):
                w.writerow([int(self.a[k]), repr(float(self.r[k]))]
                           + [repr(float(u)) for u in self.s[k]]
                           + [repr(float(u)) for u in self.s2[k]]
                           + [int(self.done[k]), 1, int(self.rule_a[k])])


def collect_demos(config: ScenarioConfig = ScenarioConfig(),
                  policy: StochasticRulePolicy | None = None,
                  episodes: int = DEMO_EPISODES, seed: int = 0,
                  deterministic: bool = False) -> DemoDataset:
    """Roll out the (stochastic) rule controller and keep every transition."""
    policy = policy or StochasticRulePolicy()
    rng = stream(seed, "demo-actions")
    env = TrapEnv(config)
    cols = {k: [] for k in ("s", "a", "r", "s2", "done", "rule_a")}
    success = []
    for ep in range(episodes):
        obs = env.reset(episode_seed(seed, "demo-episodes", ep))
        while not env.done:
            if deterministic:
                rule = policy.base(env.world)
                a = rule
            else:
                a, rule = policy.sample(env.world, rng)
            out = env.step(a)
            cols["s"].append(obs)
            cols["a"].append(a)
            cols["r"].append(out.reward)
            cols["s2"].append(out.obs)
            cols["done"].append(out.terminated)
            cols["rule_a"].append(rule)
            obs = out.obs
        success.append(env.success())
    if not all(success):
        warnings.warn(f"{episodes - sum(success)} of {episodes} demonstration episodes "
                      "did not escape the trap", RuntimeWarning, stacklevel=2)
    return DemoDataset(np.array(cols["s"]).reshape(-1, OBS_DIM), np.array(cols["a"], np.int64),
                       np.array(cols["r"], float), np.array(cols["s2"]).reshape(-1, OBS_DIM),
                       np.array(cols["done"], bool), np.array(cols["rule_a"], np.int64),
                       success)


# -- losses ------------------------------------------------------------------

def margin_loss(q_row, a_demo: int) -> float:
    """``max_a[q(a) + l(a_demo, a)] - q(a_demo)`` with a unit margin."""
    q = np.asarray(q_row, dtype=float)
    shifted = q + 1.0
    shifted[a_demo] = q[a_demo]
    return float(shifted.max() - q[a_demo])


def q_filtered_margin(q_row, a_demo: int) -> float:
    q = np.asarray(q_row, dtype=float)
    if q[a_demo] >= q.max():
        return margin_loss(q, a_demo)
    return 0.0


def q_filtered_margin_batch(q, a_demo):
    """Row-wise :func:`q_filtered_margin` plus its gradient w.r.t. ``q``."""
    return margin_terms(np.asarray(q, dtype=float), np.asarray(a_demo, dtype=np.int64))


def anneal_beta(episode: int, beta_init: float = BETA_INIT, horizon: int = BETA_HORIZON) -> float:
    if episode < 0:
        raise ValueError("episode must be non-negative")
    return beta_init * max(0.0, 1.0 - episode / horizon)


# -- replay --------------------------------------------------------------------

class ReplayBuffer:
    """Fixed-capacity ring buffer of online transitions; oldest evicted first."""

    def __init__(self, capacity: int, obs_dim: int = OBS_DIM):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.s = np.zeros((capacity, obs_dim))
        self.s2 = np.zeros((capacity, obs_dim))
        self.a = np.zeros(capacity, np.int64)
        self.r = np.zeros(capacity)
        self.done = np.zeros(capacity, bool)
        self.rule_a = np.full(capacity, -1, np.int64)
        self.size = 0
        self.head = 0
        self.added = 0

    def __len__(self):
        return self.size

    def add(self, s, a, r, s2, done, rule_a=-1) -> None:
        i = self.head
        self.s[i], self.a[i], self.r[i] = s, a, r
        self.s2[i], self.done[i], self.rule_a[i] = s2, done, rule_a
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.added += 1


def demo_rows(beta: float, size: int) -> int:
    """Number of demonstration rows in a batch, ``floor(beta * size)``.

    The small tolerance keeps products like ``0.3 * 10`` from flooring to 2.
    """
    return int(np.floor(beta * size + 1e-9))


class MixedReplayBuffer:
    """Online ring buffer plus a never-evicted demonstration store."""

    def __init__(self, capacity: int, demos: DemoDataset | None = None, beta: float = 0.0,
                 obs_dim: int = OBS_DIM):
        self.online = ReplayBuffer(capacity, obs_dim)
        self.demos = demos
        self.beta = beta

    def __len__(self):
        return len(self.online)

    def add(self, *args, **kwargs) -> None:
        self.online.add(*args, **kwargs)

    def sample(self, size: int, rng: np.random.Generator, dtype=np.float32) -> Batch:
        """Batch with ``floor(beta * size)`` demo rows first, online rows after."""
        if not 0.0 <= self.beta <= 1.0:
            raise ReplayConfigError(f"beta {self.beta} outside [0, 1]")
        k = demo_rows(self.beta, size)
        if k and (self.demos is None or len(self.demos) == 0):
            raise ReplayConfigError("beta > 0 but the demonstration store is empty")
        m = size - k
        if m and len(self.online) == 0:
            raise ReplayConfigError("online buffer is empty")
        di = rng.integers(len(self.demos), size=k) if k else np.zeros(0, np.int64)
        oi = rng.integers(len(self.online), size=m) if m else np.zeros(0, np.int64)
        o, d = self.online, self.demos
        if k == 0:
            return Batch(o.s[oi].astype(dtype), o.a[oi], o.r[oi], o.s2[oi].astype(dtype),
                         o.done[oi].astype(float), np.zeros(m, bool), o.rule_a[oi])
        if m == 0:
            return Batch(d.s[di].astype(dtype), d.a[di], d.r[di], d.s2[di].astype(dtype),
                         d.done[di].astype(float), np.ones(k, bool), d.rule_a[di])
        return Batch(
            np.concatenate([d.s[di], o.s[oi]]).astype(dtype),
            np.concatenate([d.a[di], o.a[oi]]),
            np.concatenate([d.r[di], o.r[oi]]),
            np.concatenate([d.s2[di], o.s2[oi]]).astype(dtype),
            np.concatenate([d.done[di], o.done[oi]]).astype(float),
            np.concatenate([np.ones(k, bool), np.zeros(m, bool)]),
            np.concatenate([d.rule_a[di], o.rule_a[oi]]),
        )


def sample_batch(buffer: MixedReplayBuffer, size: int, rng: np.random.Generator) -> Batch:
    return buffer.sample(size, rng)


__all__ = [
    "DemoDataset", "DemoFormatError", "MixedReplayBuffer", "ReplayBuffer", "ReplayConfigError",
    "Transition", "anneal_beta", "augment_reward", "collect_demos",
    "demo_rows", "margin_loss", "q_filtered_margin", "q_filtered_margin_batch", "sample_batch",
]
