"""Inner-loop control: speed-independent lateral tracking and velocity PID.

The lateral law projects the vehicle onto the reference path, places a
virtual reference car at the closest point, and steers toward a target
point ahead of that reference car. The steering command depends only on
geometry, not on the vehicle's speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .track import ReferenceProjection


@dataclass(frozen=True)
class TrackerParams:
    """Lookahead lengths of the lateral law (l1 ~ wheelbase, l2 = 2.3 l1)."""

    l1: float = 0.122
    l2: float = 2.3 * 0.122

    def __post_init__(self):
        if self.l1 <= 0.0 or self.l2 <= 0.0:
            raise ValueError("l1 and l2 must be positive")


@dataclass(frozen=True)
class PidParams:
    # ki defaults to 0: against the exact-integrator plant of the
    # simulation any standing integral becomes a steady speed bias
    kp: float = 2.0
    ki: float = 0.0
    kd: float = 0.0
    integral_limit: float = 0.5


@dataclass
class PidState:
    integral: float = 0.0
    prev_error: float = 0.0


def reference_steering(kappa: float, l1: float) -> float:
    """Steering angle of the virtual reference car for path curvature kappa."""
    return math.atan(l1 * kappa)


def target_point(
    projection: ReferenceProjection, psi_d: float, params: TrackerParams
) -> tuple[float, float]:
    """Target point ahead of the reference car."""
    x_t = (
        projection.x_d
        + params.l1 * math.cos(projection.theta_d)
        + params.l2 * math.cos(projection.theta_d + psi_d)
    )
    y_t = (
        projection.y_d
        + params.l1 * math.sin(projection.theta_d)
        + params.l2 * math.sin(projection.theta_d + psi_d)
    )
    return x_t, y_t


def steering_command(
    x: float, y: float, theta: float, x_t: float, y_t: float, params: TrackerParams
) -> float:
    """Steering angle pointing the front axle at the target point.

    The target is translated into the vehicle frame (the law is defined
    with the real car at the origin). Result is wrapped to (-pi, pi];
    saturation to the physical steering limit happens downstream.
    """
    rx = x_t - x
    ry = y_t - y
    psi = math.atan2(
        ry - params.l1 * math.sin(theta), rx - params.l1 * math.cos(theta)
    ) - theta
    psi = (psi + math.pi) % (2.0 * math.pi) - math.pi
    return math.pi if psi == -math.pi else psi


def velocity_pid(
    v_measured: float,
    v_setpoint: float,
    pid_state: PidState,
    dt: float,
    params: PidParams,
    accel_limits: tuple[float, float] = (-2.0, 1.0),
) -> float:
    """PID on velocity error with clamped integral; returns an acceleration."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    e = v_setpoint - v_measured
    pid_state.integral += e * dt
    lim = params.integral_limit
    pid_state.integral = min(max(pid_state.integral, -lim), lim)
    de = (e - pid_state.prev_error) / dt
    pid_state.prev_error = e
    a = params.kp * e + params.ki * pid_state.integral + params.kd * de
    return min(max(a, accel_limits[0]), accel_limits[1])
