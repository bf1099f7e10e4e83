"""Kinematic bicycle model with actuator limits.

Physical constants correspond to a 1:24-scale car-like robot: wheelbase
0.122 m, 18 degree steering limit, 1.5 m/s top speed, 197 x 81 mm body.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

from .track import Track


@dataclass(frozen=True)
class VehicleLimits:
    wheelbase: float = 0.122
    max_steer: float = math.radians(18.0)
    max_steer_rate: float = 1.5
    max_speed: float = 1.5
    max_accel: float = 1.0
    max_decel: float = 2.0
    body_length: float = 0.197
    body_width: float = 0.081

    @property
    def min_turn_radius(self) -> float:
        return self.wheelbase / math.tan(self.max_steer)


#: Simulation default. The measured servo slew rate of the physical car
#: (0.076 rad/s) cannot track the reference path at nominal speed; it is
#: kept available as SERVO_LIMITS for hardware-faithful runs.
DEFAULT_LIMITS = VehicleLimits()
SERVO_LIMITS = VehicleLimits(max_steer_rate=0.076)


@dataclass(frozen=True)
class LaneChange:
    """Progress of an in-flight lane change."""

    from_lane: int
    to_lane: int
    progress: float  # 0 at start, 1 on completion
    distance: float  # longitudinal distance over which the change completes
    reverting: bool = False  # steering back toward from_lane (progress falls)


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    theta: float
    v: float
    psi: float
    lane: int
    s: float
    lane_change: Optional[LaneChange] = None


def clamp_actuation(
    prev_psi: float,
    desired_psi: float,
    desired_v: float,
    prev_v: float,
    dt: float,
    limits: VehicleLimits,
) -> tuple[float, float]:
    """Apply steering rate/angle and speed/acceleration limits."""
    dpsi = desired_psi - prev_psi
    max_dpsi = limits.max_steer_rate * dt
    dpsi = min(max(dpsi, -max_dpsi), max_dpsi)
    psi = prev_psi + dpsi
    psi = min(max(psi, -limits.max_steer), limits.max_steer)

    v = min(max(desired_v, 0.0), limits.max_speed)
    dv = v - prev_v
    dv = min(max(dv, -limits.max_decel * dt), limits.max_accel * dt)
    return psi, prev_v + dv


def step_kinematics(
    state: VehicleState,
    commanded_v: float,
    commanded_psi: float,
    dt: float,
    limits: VehicleLimits,
    track: Optional[Track] = None,
) -> VehicleState:
    """One semi-implicit Euler step of the bicycle model.

    Commands are clamped first; the pose then advances with the new
    velocity and steering held constant over dt. If a track is given, the
    arc-length coordinate advances by the traveled distance and wraps at
    the lane length; exact re-synchronisation against the path happens in
    the controller's projection, not here.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    psi, v = clamp_actuation(
        state.psi, commanded_psi, commanded_v, state.v, dt, limits
    )
    x = state.x + v * math.cos(state.theta) * dt
    y = state.y + v * math.sin(state.theta) * dt
    theta = _wrap_angle(state.theta + v * math.tan(psi) / limits.wheelbase * dt)
    s = state.s
    if track is not None:
        s = (state.s + v * dt) % track.lanes[state.lane].length
    return replace(state, x=x, y=y, theta=theta, v=v, psi=psi, s=s)


def _wrap_angle(a: float) -> float:
    a = (a + math.pi) % (2.0 * math.pi) - math.pi
    return math.pi if a == -math.pi else a
