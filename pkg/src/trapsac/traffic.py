"""IDM car-following, MOBIL lane changes and the multi-vehicle world state."""

from dataclasses import dataclass, field
import math

import numpy as np

from . import kernels
from .dynamics import DT, MAX_SPEED, STEER_STEP, VEHICLE_LENGTH, VEHICLE_WIDTH

IDM_ACCEL_LIMIT = 5.0

# lateral tracker shared by traffic lane changes and the rule controller
K_LATERAL = 0.1
K_HEADING = 1.0
LANE_SETTLE_TOL = 0.3


class CollisionStateError(RuntimeError):
    """Raised when a car-following gap is non-positive."""


@dataclass(frozen=True)
class IdmParams:
    a_max: float = 0.5
    v_desired: float = 12.5
    s0: float = 10.0
    T: float = 1.5
    b: float = 0.5
    delta: float = 4.0

    def __post_init__(self):
        for name in ("a_max", "v_desired", "s0", "T", "b", "delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"IDM parameter {name} must be positive")
        if self.delta < 1:
            raise ValueError("IDM exponent must be >= 1")

    def packed(self) -> np.ndarray:
        return np.array([self.a_max, self.v_desired, self.s0, self.T, self.b,
                         self.delta, IDM_ACCEL_LIMIT])


@dataclass(frozen=True)
class MobilParams:
    politeness: float = 0.5
    a_threshold: float = 0.2
    b_safe: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.politeness <= 1.0:
            raise ValueError("politeness must lie in [0, 1]")
        if self.a_threshold <= 0 or self.b_safe <= 0:
            raise ValueError("MOBIL thresholds must be positive")

    def packed(self) -> np.ndarray:
        return np.array([self.politeness, self.a_threshold, self.b_safe])


@dataclass(frozen=True)
class TrapParams:
    speed: float = 8.0

    def __post_init__(self):
        if not 0.0 < self.speed < 12.5:
            raise ValueError("trap speed must lie strictly between 0 and 12.5 m/s")


def idm_desired_gap(v: float, dv: float, params: IdmParams = IdmParams()) -> float:
    """Desired dynamic gap ``s*``, never below the standstill gap ``s0``."""
    return kernels.idm_gap_star(float(v), float(dv), params.packed())


def idm_acceleration(v: float, dv: float, gap: float = math.inf,
                     params: IdmParams = IdmParams()) -> float:
    """IDM acceleration clamped to +-5 m/s^2.

    Args:
        v: own speed.
        dv: approach rate ``v - v_leader``.
        gap: bumper-to-bumper distance to the leader, ``inf`` for free road.
    """
    if gap <= 0:
        raise CollisionStateError(f"non-positive car-following gap {gap}")
    return kernels.idm_accel(float(v), float(dv), float(gap), params.packed())


def mobil_decide(accel_current: float, accel_target: float, d_rear: float,
                 d_front: float, rear_after: float = 0.0,
                 params: MobilParams = MobilParams()) -> bool:
    """MOBIL incentive plus safety criterion.

    ``accel_current``/``accel_target`` are the lane changer's IDM accelerations
    in its own and the candidate lane; ``d_rear``/``d_front`` the acceleration
    changes imposed on the new follower and leader; ``rear_after`` the new
    follower's acceleration once the change is made.
    """
    return bool(kernels.mobil_accepts(
        accel_target - accel_current, d_rear, d_front, rear_after,
        params.politeness, params.a_threshold, params.b_safe,
    ))


@dataclass
class World:
    """Mutable state of every vehicle on a straight multi-lane road.

    Vehicle 0 is the ego; ``kind`` tags the others as trap or traffic.
    """

    x: np.ndarray
    y: np.ndarray
    psi: np.ndarray
    v: np.ndarray
    kind: np.ndarray
    target_lane: np.ndarray
    lanes: int = 3
    lane_width: float = 4.0
    idm: IdmParams = field(default_factory=IdmParams)
    mobil: MobilParams = field(default_factory=MobilParams)
    trap_speed: float = 8.0

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def lane_center(self, lane: int) -> float:
        return lane * self.lane_width

    def lane_index(self, y: float) -> int:
        return kernels.lane_of(float(y), self.lane_width, self.lanes)

    def vehicle(self, i: int):
        from .dynamics import VehicleState
        return VehicleState(float(self.x[i]), float(self.y[i]), float(self.psi[i]), float(self.v[i]))

    def copy(self) -> "World":
        return World(self.x.copy(), self.y.copy(), self.psi.copy(), self.v.copy(),
                     self.kind.copy(), self.target_lane.copy(), self.lanes,
                     self.lane_width, self.idm, self.mobil, self.trap_speed)


def advance_traffic(world: World, dt: float = DT) -> World:
    """Move every non-ego vehicle by one step, in place.

    Traffic vehicles follow IDM toward their leader (the ego included) and run
    one MOBIL check per step; trap vehicles hold their speed and lane.  The
    ego's own entry is left untouched.
    """
    accel, steer = kernels.traffic_controls(
        world.x, world.y, world.psi, world.v, world.kind, world.target_lane,
        world.lanes, world.lane_width, VEHICLE_LENGTH, VEHICLE_WIDTH,
        world.idm.packed(), world.mobil.packed(), K_LATERAL, K_HEADING,
        STEER_STEP, LANE_SETTLE_TOL,
    )
    ego = (world.x[0], world.y[0], world.psi[0], world.v[0])
    kernels.bicycle_step_many(world.x, world.y, world.psi, world.v, accel, steer,
                              dt, 0.5 * VEHICLE_LENGTH, MAX_SPEED)
    world.x[0], world.y[0], world.psi[0], world.v[0] = ego
    traps = world.kind == kernels.TRAP
    world.v[traps] = world.trap_speed
    return world
