"""Vehicle kinematics and the discrete ego action set."""

from dataclasses import dataclass
import math

import numpy as np

from . import kernels

VEHICLE_LENGTH = 5.0
VEHICLE_WIDTH = 2.0
MAX_SPEED = 40.0
DT = 0.5  # 2 Hz

ACCELERATIONS = (-1.0, 0.0, 1.0)
STEERING_ANGLES = (-math.pi / 50, 0.0, math.pi / 50)
STEER_STEP = math.pi / 50
N_ACTIONS = 9
COAST = 4  # zero acceleration, zero steering


class InvalidActionError(ValueError):
    pass


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    heading: float
    speed: float
    length: float = VEHICLE_LENGTH
    width: float = VEHICLE_WIDTH

    @property
    def v_lon(self) -> float:
        return self.speed * math.cos(self.heading)

    @property
    def v_lat(self) -> float:
        return self.speed * math.sin(self.heading)


def decode_action(index: int) -> tuple[float, float]:
    """Return ``(accel, steer)`` for a discrete action index in ``[0, 8]``.

    The index is ``3 * accel_idx + steer_idx`` with both sets ordered from
    negative to positive.
    """
    if isinstance(index, (bool, np.bool_)) or not isinstance(index, (int, np.integer)):
        raise InvalidActionError(f"action index must be an integer, got {index!r}")
    if not 0 <= index < N_ACTIONS:
        raise InvalidActionError(f"action index {index} outside [0, 8]")
    return ACCELERATIONS[index // 3], STEERING_ANGLES[index % 3]


def encode_action(accel: float, steer: float) -> int:
    try:
        return 3 * ACCELERATIONS.index(accel) + STEERING_ANGLES.index(steer)
    except ValueError:
        raise InvalidActionError(f"({accel}, {steer}) is not in the action set") from None


def step_kinematics(state: VehicleState, accel: float, steer: float, dt: float = DT) -> VehicleState:
    """Advance one vehicle by ``dt`` with the kinematic bicycle model.

    The reference point is the vehicle centre with a half-length lever arm;
    speed is clamped to ``[0, MAX_SPEED]`` and the heading wrapped to
    ``(-pi, pi]``.
    """
    values = (state.x, state.y, state.heading, state.speed, accel, steer, dt)
    if not all(math.isfinite(float(u)) for u in values):
        raise FloatingPointError(f"non-finite kinematic input {values}")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if abs(steer) > math.pi / 4:
        raise ValueError(f"steering angle {steer} exceeds pi/4")
    x, y, psi, v = kernels.bicycle_step(
        float(state.x), float(state.y), float(state.heading), float(state.speed),
        float(accel), float(steer), float(dt), 0.5 * state.length, MAX_SPEED,
    )
    return VehicleState(x, y, psi, v, state.length, state.width)
