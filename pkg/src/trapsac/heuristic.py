"""Rule-based overtaking controller and its stochastic wrapper.

Longitudinal offsets follow one convention throughout: ``dx = x_ego - x_other``,
so a vehicle ahead has a negative offset.  An absent leader is represented by
``dx = -inf`` and ``speed = +inf``.
"""

from dataclasses import dataclass
import math

import numpy as np

from . import kernels
from .dynamics import COAST, N_ACTIONS, STEER_STEP, VEHICLE_LENGTH, VehicleState, encode_action
from .traffic import K_HEADING, K_LATERAL, World

SPEED_DEADBAND = 0.25
REAR_MIN_GAP = 2.0
# a commanded lane is kept until the ego is this close to its centre; wider
# than the tracker's own dead zone (about 0.31 m at zero heading)
SETTLE_TOL = 0.5


@dataclass(frozen=True)
class HeuristicParams:
    """Parameters of the overtaking rule.

    ``o_dec=None`` evaluates the two lane-change safety conditions every step;
    ``True``/``False`` force the flag.  ``l_target=None`` targets the outermost
    lane (highest index).
    """

    t_safe: float = 1.5
    v_min: float = 6.0
    v_max: float = 15.0
    n: int = 5
    o_dec: bool | None = None
    l_target: int | None = None
    sensing_range: float = 100.0

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise ValueError("v_min must be below v_max")
        if self.n < 2:
            raise ValueError("need at least two speed candidates")
        if self.t_safe <= 0:
            raise ValueError("t_safe must be positive")

    @property
    def candidates(self) -> np.ndarray:
        i = np.arange(self.n)
        return self.v_min + i / (self.n - 1) * (self.v_max - self.v_min)


def safety_distance(v_ego: float, v_l_current: float, v_l_target: float,
                    dx_l_current: float, dx_l_target: float,
                    params: HeuristicParams = HeuristicParams()) -> float:
    return (v_ego - min(v_l_current, v_l_target)) * params.t_safe + dx_l_current - dx_l_target


def target_speed(v_l_current: float, v_l_target: float,
                 params: HeuristicParams = HeuristicParams()) -> float:
    """Largest candidate speed strictly below both leaders, else ``v_min``."""
    cap = min(v_l_current, v_l_target)
    feasible = [c for c in params.candidates if c < cap]
    return float(max(feasible)) if feasible else params.v_min


def _lane_leader(world: World, lane: int, params: HeuristicParams):
    lead, follow = kernels.leader_follower(
        world.x, world.y, 0, world.lane_center(lane), 0.5 * world.lane_width,
        params.sensing_range,
    )
    return lead, follow


def _offset_and_speed(world: World, j: int) -> tuple[float, float]:
    if j < 0:
        return -math.inf, math.inf
    return float(world.x[0] - world.x[j]), float(world.v[j])


def lane_change_safe(world: World, lane: int, params: HeuristicParams = HeuristicParams()) -> bool:
    """Both overtaking safety conditions for moving the ego into ``lane``.

    The ego must not close on a slower leader there within ``t_safe``, and a
    faster follower there must not close on the ego within ``t_safe``.
    """
    lead, follow = _lane_leader(world, lane, params)
    v = world.v[0]
    if lead >= 0:
        gap = world.x[lead] - world.x[0] - VEHICLE_LENGTH
        if gap <= max(0.0, v - world.v[lead]) * params.t_safe:
            return False
    if follow >= 0:
        gap = world.x[0] - world.x[follow] - VEHICLE_LENGTH
        if gap <= REAR_MIN_GAP + max(0.0, world.v[follow] - v) * params.t_safe:
            return False
    return True


def overtake_decision(world: World, params: HeuristicParams = HeuristicParams()):
    """One evaluation of the overtaking rule.

    Returns ``(speed, lane)``: the target speed from the candidate set and
    either the next lane toward ``l_target`` or the current lane.
    """
    cur = world.lane_index(world.y[0])
    goal = world.lanes - 1 if params.l_target is None else params.l_target
    nxt = cur + int(np.sign(goal - cur))
    lead_c, _ = _lane_leader(world, cur, params)
    lead_t, _ = _lane_leader(world, nxt, params)
    dx_c, v_c = _offset_and_speed(world, lead_c)
    dx_t, v_t = _offset_and_speed(world, lead_t)
    v_target = target_speed(v_c, v_t, params)
    if nxt == cur:
        return v_target, cur
    o_dec = lane_change_safe(world, nxt, params) if params.o_dec is None else params.o_dec
    if not o_dec:
        return v_target, cur
    if lead_t < 0:
        return v_target, nxt  # nobody to catch up with in the target lane
    # d_s - dx_c reduces to (v_ego - min(v_c, v_t)) * t_safe - dx_t; written
    # without the cancellation so an absent current leader stays finite
    d_s_minus_dx = (world.v[0] - min(v_c, v_t)) * params.t_safe - dx_t
    if d_s_minus_dx > 0:
        return v_target, nxt
    return v_target, cur


def low_level_track(ego: VehicleState, speed: float, lane: int, lane_width: float = 4.0) -> int:
    """Discrete action tracking a target speed and lane centre."""
    dv = speed - ego.speed
    accel = 0.0 if abs(dv) <= SPEED_DEADBAND else math.copysign(1.0, dv)
    # saturating the lateral error at half a lane keeps the heading built up
    # during a full-lane change small enough not to overshoot the next lane
    half = 0.5 * lane_width
    err = min(half, max(-half, ego.y - lane * lane_width))
    raw = -K_LATERAL * err - K_HEADING * ego.heading
    steer = kernels.quantize_steer(raw, STEER_STEP)
    return encode_action(accel, steer)


class RuleController:
    """Deterministic overtaking controller acting on the full world state.

    A lane command is held until the ego has settled in that lane, so one lane
    change finishes before the next is considered.  The memory resets whenever
    a different :class:`World` object is passed in (a new episode).
    """

    def __init__(self, params: HeuristicParams = HeuristicParams()):
        self.params = params
        self._world = None
        self._lane = 0

    def reset(self) -> None:
        self._world = None

    def decide(self, world: World) -> tuple[float, int]:
        if world is not self._world:
            self._world = world
            self._lane = world.lane_index(world.y[0])
        speed, lane = overtake_decision(world, self.params)
        if abs(world.y[0] - world.lane_center(self._lane)) <= SETTLE_TOL:
            self._lane = lane
        return speed, self._lane

    def __call__(self, world: World) -> int:
        speed, lane = self.decide(world)
        return low_level_track(world.vehicle(0), speed, lane, world.lane_width)


def rule_distribution(action: int, p_rule: float = 0.9) -> np.ndarray:
    probs = np.full(N_ACTIONS, (1.0 - p_rule) / (N_ACTIONS - 1))
    probs[action] = p_rule
    return probs


def rule_distributions(actions, p_rule: float = 0.9) -> np.ndarray:
    """Row-wise :func:`rule_distribution` for an array of rule actions."""
    actions = np.asarray(actions, dtype=np.int64)
    probs = np.full((actions.shape[0], N_ACTIONS), (1.0 - p_rule) / (N_ACTIONS - 1))
    probs[np.arange(actions.shape[0]), actions] = p_rule
    return probs


class StochasticRulePolicy:
    """Mass ``p_rule`` on the rule action, the rest spread evenly."""

    def __init__(self, base: RuleController | None = None, p_rule: float = 0.9):
        if not 1.0 / N_ACTIONS < p_rule <= 1.0:
            raise ValueError("p_rule must lie in (1/9, 1]")
        self.base = base if base is not None else RuleController()
        self.p_rule = p_rule

    def distribution(self, world: World) -> np.ndarray:
        return rule_distribution(self.base(world), self.p_rule)

    def sample(self, world: World, rng: np.random.Generator) -> tuple[int, int]:
        """Draw an action; returns ``(sampled, rule_action)``."""
        rule = self.base(world)
        probs = rule_distribution(rule, self.p_rule)
        return int(rng.choice(N_ACTIONS, p=probs)), rule


__all__ = [
    "COAST", "HeuristicParams", "RuleController", "StochasticRulePolicy",
    "lane_change_safe", "low_level_track", "overtake_decision", "rule_distribution",
    "rule_distributions", "safety_distance", "target_speed",
]
