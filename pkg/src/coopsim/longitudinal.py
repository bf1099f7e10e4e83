"""Longitudinal driver models: IDM, escape-distance adaptation, and the
cooperative C-IDM extension that reacts to weighted virtual vehicles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class IdmParams:
    v0: float = 0.4  # desired speed [m/s]
    T: float = 2.0  # time headway [s]
    alpha: float = 0.5  # max acceleration [m/s^2]
    beta: float = 0.3  # desired deceleration [m/s^2]
    delta: float = 4.0  # acceleration exponent
    s0: float = 0.1  # jam distance [m]

    def __post_init__(self):
        if min(self.v0, self.T, self.alpha, self.beta, self.s0) <= 0.0:
            raise ValueError("IDM parameters must be strictly positive")
        if self.delta < 1.0:
            raise ValueError("delta must be >= 1")


IDM_NORMAL = IdmParams(v0=0.4, T=2.0, alpha=0.5, beta=0.3, delta=4.0, s0=0.1)
IDM_AGGRESSIVE = IdmParams(v0=0.4, T=2.0, alpha=1.0, beta=0.5, delta=4.0, s0=0.1)


@dataclass(frozen=True)
class FrontTarget:
    """A leader as seen by the ego: gap, approach rate, and urgency weight.

    approach_rate is ego speed minus front speed (positive when closing).
    Real vehicles carry weight 1.0; virtual (projected) vehicles carry the
    owner's urgency weight.
    """

    gap: float
    approach_rate: float
    front_speed: float
    weight: float = 1.0
    is_virtual: bool = False

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError("weight must be in [0, 1]")


def desired_gap(v: float, dv: float, params: IdmParams, s0: Optional[float] = None) -> float:
    """Desired minimum gap s*(v, dv), floored at the jam distance."""
    jam = params.s0 if s0 is None else s0
    s_star = jam + params.T * v + v * dv / (2.0 * math.sqrt(params.alpha * params.beta))
    return max(s_star, jam)


def idm_acceleration(
    v: float,
    target: Optional[FrontTarget],
    params: IdmParams,
    effective_s0: Optional[float] = None,
    max_decel: float = 2.0,
    v0_override: Optional[float] = None,
) -> float:
    """IDM acceleration toward a leader (or free road when target is None).

    effective_s0 substitutes the escape-adapted jam distance into s*;
    v0_override substitutes a boosted desired speed into the free term.
    Output clamped to [-max_decel, alpha].
    """
    v0 = params.v0 if v0_override is None else v0_override
    a = params.alpha * (1.0 - (v / v0) ** params.delta)
    if target is not None:
        s_star = desired_gap(v, target.approach_rate, params, s0=effective_s0)
        a -= params.alpha * (s_star / target.gap) ** 2
    return min(max(a, -max_decel), params.alpha)


def escape_distance(v_f: float, v0: float, wheelbase: float) -> float:
    """Extra jam distance opening merge-out room behind a slow leader.

    Smoothstep in the speed ratio: 2L at a stopped leader, 0 once the
    leader is at or above the ego's desired speed.
    """
    r = v_f / v0
    if r > 1.0:
        return 0.0
    return 2.0 * wheelbase * (2.0 * r**3 - 3.0 * r**2 + 1.0)


def effective_jam_distance(
    front_speed: Optional[float], params: IdmParams, wheelbase: float
) -> float:
    """s0 plus the escape distance for the given leader speed."""
    if front_speed is None:
        return params.s0
    return params.s0 + escape_distance(front_speed, params.v0, wheelbase)


def cidm_acceleration(
    v: float,
    real_front: Optional[FrontTarget],
    virtual_front: Optional[FrontTarget],
    params: IdmParams,
    effective_s0: Optional[float] = None,
    virtual_effective_s0: Optional[float] = None,
    max_decel: float = 2.0,
    v0_override: Optional[float] = None,
) -> float:
    """Cooperative IDM: min of the real-front response and the weighted
    response to a projected virtual leader.
    """
    a_real = idm_acceleration(
        v, real_front, params, effective_s0, max_decel, v0_override
    )
    if virtual_front is None:
        return a_real
    a_virt = idm_acceleration(
        v,
        virtual_front,
        params,
        effective_s0 if virtual_effective_s0 is None else virtual_effective_s0,
        max_decel,
        v0_override,
    )
    return min(virtual_front.weight * a_virt, a_real)


def boosted_desired_speed(
    v0: float, w_v: float, trail_gap: float, c: float, max_speed: float = 1.5
) -> float:
    """Raised desired speed for a vehicle just ahead of a virtual vehicle.

    Never below v0 (the leader is asked to make space, not to slow down)
    and never above the vehicle's speed limit.
    """
    if c <= 0.0:
        raise ValueError("visibility range c must be positive")
    boosted = v0 * (1.0 + w_v * (c - trail_gap) / c)
    return min(max(boosted, v0), max_speed)
