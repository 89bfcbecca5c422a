"""The trap-scenario episodic environment."""

import csv
from dataclasses import dataclass, field
import math

import numpy as np

from . import kernels
from .dynamics import (
    DT, VEHICLE_LENGTH, VEHICLE_WIDTH, VehicleState, decode_action, step_kinematics,
)
from .traffic import IdmParams, MobilParams, TrapParams, World, advance_traffic

OBS_DIM = 26
N_NEIGHBORS = 4
POS_SCALE = 100.0
VEL_SCALE = 30.0
ACCIDENT_REWARD = -10.0

# world indices of the scripted vehicles
EGO = 0
TRAP_1 = 1
TRAP_2 = 2

CAUSES = ("none", "collision", "off_road", "stopped", "timeout")


class EpisodeFinishedError(RuntimeError):
    pass


@dataclass(frozen=True)
class RewardWeights:
    w_v: float = 1.5
    w_y: float = 0.05
    w_theta: float = 0.05

    def __post_init__(self):
        if min(self.w_v, self.w_y, self.w_theta) < 0 or self.total <= 0:
            raise ValueError("reward weights must be non-negative with a positive sum")

    @property
    def total(self) -> float:
        return self.w_v + self.w_y + self.w_theta


@dataclass(frozen=True)
class ScenarioConfig:
    """Randomisation ranges and limits of the trap scenario.

    ``d1_range``/``d2_range`` are bumper-to-bumper gaps from the ego to trap
    vehicle 1 (adjacent lane) and trap vehicle 2 (ego lane).
    """

    d1_range: tuple[float, float] = (14.80, 16.44)
    d2_range: tuple[float, float] = (4.06, 7.43)
    lanes: int = 3
    lane_width: float = 4.0
    max_steps: int = 300
    trap: TrapParams = field(default_factory=TrapParams)
    n_traffic: int = 3
    seed: int | None = None
    ego_speed: float = 10.0
    ego_lane: int = 0
    # trailing traffic: first vehicle this far behind the ego, then spaced
    traffic_gap_range: tuple[float, float] = (30.0, 60.0)
    traffic_speed_range: tuple[float, float] = (10.0, 12.5)
    # traffic already past the trap, in the lanes the trap leaves open
    n_lead_traffic: int = 2
    lead_gap_range: tuple[float, float] = (60.0, 120.0)
    sensing_range: float = 100.0
    stop_speed: float = 0.5
    stop_steps: int = 10
    idm: IdmParams = field(default_factory=IdmParams)
    mobil: MobilParams = field(default_factory=MobilParams)
    weights: RewardWeights = field(default_factory=RewardWeights)

    def __post_init__(self):
        if self.lanes < 2:
            raise ValueError("at least two lanes are required")
        if self.lane_width != 4.0:
            raise ValueError("lane width is fixed at 4 m")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        for lo, hi in (self.d1_range, self.d2_range, self.traffic_gap_range,
                       self.traffic_speed_range, self.lead_gap_range):
            if lo > hi:
                raise ValueError("empty sampling range")
        if not 0 <= self.ego_lane < self.lanes - 1:
            raise ValueError("ego lane needs an adjacent lane on its left for trap vehicle 1")

    @property
    def road_bounds(self) -> tuple[float, float]:
        half = 0.5 * self.lane_width
        return -half, self.lanes * self.lane_width - half


# rewards -------------------------------------------------------------------

def reward_velocity(v: float) -> float:
    """Piecewise speed reward peaking at 15 m/s."""
    if v > 15.0:
        return math.exp(-((v - 15.0) ** 2))
    if v > 12.5:
        return 8.0 / 25.0 * v - 19.0 / 5.0
    if v > 5.0:
        return 2.0 / 75.0 * v - 2.0 / 15.0
    return 0.0


def reward_lane(d_e: float) -> float:
    return math.exp(-1.5 * d_e * d_e)


def reward_steer(theta: float) -> float:
    return -abs(math.sin(theta))


def total_reward(v_lon: float, d_e: float, steer: float, accident: bool,
                 weights: RewardWeights = RewardWeights()) -> float:
    if accident:
        return ACCIDENT_REWARD
    return (weights.w_v * reward_velocity(v_lon) + weights.w_y * reward_lane(d_e)
            + weights.w_theta * reward_steer(steer)) / weights.total


# observation ---------------------------------------------------------------

def encode_observation(world: World, sensing_range: float = 100.0) -> np.ndarray:
    out = np.zeros(OBS_DIM)
    kernels.encode_observation(world.x, world.y, world.psi, world.v, world.lane_width,
                               world.lanes, sensing_range, POS_SCALE, VEL_SCALE,
                               N_NEIGHBORS, out)
    return out


def decode_observation(obs: np.ndarray, lane_width: float = 4.0) -> dict:
    """Undo the fixed feature scaling; neighbour quantities stay ego-relative."""
    obs = np.asarray(obs, dtype=float)
    neighbors = []
    for k in range(N_NEIGHBORS):
        p, dx, dy, dvx, dvy = obs[6 + 5 * k: 11 + 5 * k]
        neighbors.append({"present": bool(p), "dx": dx * POS_SCALE, "dy": dy * POS_SCALE,
                          "dv_lon": dvx * VEL_SCALE, "dv_lat": dvy * VEL_SCALE})
    return {
        "present": bool(obs[0]),
        "x": obs[1] * POS_SCALE,
        "y": obs[2] * POS_SCALE,
        "v_lon": obs[3] * VEL_SCALE,
        "v_lat": obs[4] * VEL_SCALE,
        "d_e": obs[5] * lane_width,
        "neighbors": neighbors,
    }


# termination / success -----------------------------------------------------

def check_termination(world: World, step: int, slow_steps: int,
                      config: ScenarioConfig = ScenarioConfig()) -> str:
    """Return the termination cause for the current world state.

    ``slow_steps`` counts consecutive steps with the ego below
    ``config.stop_speed``; ``step`` is the number of steps taken so far.
    """
    if kernels.ego_collision(world.x, world.y, world.psi, VEHICLE_LENGTH, VEHICLE_WIDTH) >= 0:
        return "collision"
    lo, hi = config.road_bounds
    if not lo <= world.y[EGO] <= hi:
        return "off_road"
    if slow_steps >= config.stop_steps:
        return "stopped"
    if step >= config.max_steps:
        return "timeout"
    return "none"


def check_success(ego_x, trap_x) -> bool:
    """True iff the ego ended the episode ahead of trap vehicle 1.

    Equivalent to: the ego passed trap vehicle 1 at some step and stayed ahead
    at every later step.  Both arguments are per-step position histories.
    """
    ego_x = np.asarray(ego_x, dtype=float)
    trap_x = np.asarray(trap_x, dtype=float)
    if ego_x.size == 0:
        return False
    return bool(ego_x[-1] > trap_x[-1])


@dataclass
class StepOutcome:
    obs: np.ndarray
    reward: float
    terminated: bool
    truncated: bool
    cause: str
    escaped: bool


class TrapEnv:
    """Highway trap scenario at 2 Hz.

    Lane 0 is at ``y = 0`` and lane indices grow with ``y``.  The ego starts in
    ``config.ego_lane`` with trap vehicle 2 right ahead of it and trap vehicle 1
    ahead in the next lane up; trailing IDM/MOBIL traffic starts behind.
    """

    def __init__(self, config: ScenarioConfig = ScenarioConfig(), record: bool = False):
        self.config = config
        self.record = record
        self.world: World | None = None
        self._done = True

    # -- episode control ----------------------------------------------------
    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is None:
            seed = self.config.seed
        if seed is None:
            raise ValueError("reset() requires a seed")
        rng = np.random.Generator(np.random.Philox(key=int(seed)))
        cfg = self.config
        lw = cfg.lane_width
        n = 3 + cfg.n_traffic + cfg.n_lead_traffic
        x = np.zeros(n)
        y = np.zeros(n)
        v = np.zeros(n)
        kind = np.full(n, kernels.TRAFFIC, dtype=np.int64)
        lane = np.zeros(n, dtype=np.int64)

        d1 = rng.uniform(*cfg.d1_range)
        d2 = rng.uniform(*cfg.d2_range)
        kind[EGO] = kernels.EGO
        lane[EGO] = cfg.ego_lane
        v[EGO] = cfg.ego_speed
        kind[TRAP_1] = kind[TRAP_2] = kernels.TRAP
        lane[TRAP_1] = cfg.ego_lane + 1
        x[TRAP_1] = VEHICLE_LENGTH + d1
        lane[TRAP_2] = cfg.ego_lane
        x[TRAP_2] = VEHICLE_LENGTH + d2
        v[TRAP_1] = v[TRAP_2] = cfg.trap.speed

        back = 0.0
        for i in range(3, 3 + cfg.n_traffic):
            back += rng.uniform(*cfg.traffic_gap_range)
            x[i] = -back
            lane[i] = rng.integers(cfg.lanes)
            v[i] = rng.uniform(*cfg.traffic_speed_range)
        open_lanes = [k for k in range(cfg.lanes) if k not in (cfg.ego_lane, cfg.ego_lane + 1)]
        ahead = x[TRAP_1]
        for i in range(3 + cfg.n_traffic, n):
            ahead += rng.uniform(*cfg.lead_gap_range)
            x[i] = ahead
            lane[i] = open_lanes[rng.integers(len(open_lanes))]
            v[i] = cfg.idm.v_desired
        y[:] = lane * lw

        self.world = World(x, y, np.zeros(n), v, kind, lane.copy(), cfg.lanes, lw,
                           cfg.idm, cfg.mobil, cfg.trap.speed)
        self.seed = int(seed)
        self.steps = 0
        self.slow_steps = 0
        self.ego_x_hist = [float(x[EGO])]
        self.trap_x_hist = [float(x[TRAP_1])]
        self.distance = 0.0
        self.speed_sum = 0.0
        self.collided = False
        self.cause = "none"
        self._done = False
        self.trajectory = []
        if self.record:
            self._record()
        return self.observation()

    def observation(self) -> np.ndarray:
        return encode_observation(self.world, self.config.sensing_range)

    @property
    def escaped(self) -> bool:
        return self.world.x[EGO] > self.world.x[TRAP_1]

    @property
    def done(self) -> bool:
        return self._done

    def ego_state(self) -> VehicleState:
        return self.world.vehicle(EGO)

    def step(self, action: int) -> StepOutcome:
        if self._done:
            raise EpisodeFinishedError("step() called on a finished episode; call reset()")
        accel, steer = decode_action(action)
        w = self.world
        ego = self.ego_state()
        advance_traffic(w, DT)
        new = step_kinematics(ego, accel, steer, DT)
        w.x[EGO], w.y[EGO], w.psi[EGO], w.v[EGO] = new.x, new.y, new.heading, new.speed

        self.steps += 1
        self.distance += math.hypot(new.x - ego.x, new.y - ego.y)
        self.speed_sum += ego.speed
        self.slow_steps = self.slow_steps + 1 if new.speed < self.config.stop_speed else 0
        cause = check_termination(w, self.steps, self.slow_steps, self.config)
        accident = cause in ("collision", "off_road", "stopped")
        self.collided = accident
        lane = w.lane_index(new.y)
        d_e = new.y - w.lane_center(lane)
        reward = total_reward(new.v_lon, d_e, steer, accident, self.config.weights)

        self.ego_x_hist.append(float(w.x[EGO]))
        self.trap_x_hist.append(float(w.x[TRAP_1]))
        if self.record:
            self._record()
        self.cause = cause
        terminated = accident
        truncated = cause == "timeout"
        self._done = terminated or truncated
        return StepOutcome(self.observation(), reward, terminated, truncated, cause,
                           bool(self.escaped))

    # -- bookkeeping --------------------------------------------------------
    def success(self) -> bool:
        return check_success(self.ego_x_hist, self.trap_x_hist)

    @property
    def avg_speed(self) -> float:
        return self.speed_sum / self.steps if self.steps else 0.0

    def _record(self):
        w = self.world
        for i in range(w.n):
            self.trajectory.append((
                self.steps, i, float(w.x[i]), float(w.y[i]), float(w.psi[i]), float(w.v[i]),
                w.lane_index(w.y[i]), int(i == EGO), int(w.kind[i] == kernels.TRAP),
            ))

    def export_trajectory(self, path) -> None:
        write_trajectory_csv(self.trajectory, path)


TRAJECTORY_COLUMNS = ("step", "vehicle_id", "x", "y", "heading", "speed", "lane", "is_ego", "is_trap")


def write_trajectory_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAJECTORY_COLUMNS)
        for row in rows:
            writer.writerow([repr(c) if isinstance(c, float) else c for c in row])
