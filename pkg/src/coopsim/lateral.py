"""Lane-change decisions: MOBIL safety + incentive criteria, the
cooperative C-MOBIL variant, and the lateral blend path executed during
a change.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .dynamics import LaneChange
from .longitudinal import (
    FrontTarget,
    IdmParams,
    effective_jam_distance,
    idm_acceleration,
)


@dataclass(frozen=True)
class MobilParams:
    politeness: float = 0.5  # p
    b_safe: float = 0.35  # safe braking bound for the new follower [m/s^2]
    delta_a_threshold: float = 0.4  # switching threshold [m/s^2]
    gamma: float = 2.0  # lane-change duration / safety time constant [s]
    cooperative: bool = False

    def __post_init__(self):
        if not 0.0 <= self.politeness <= 1.0:
            raise ValueError("politeness must be in [0, 1]")
        if self.b_safe <= 0.0 or self.gamma <= 0.0 or self.delta_a_threshold < 0.0:
            raise ValueError("b_safe and gamma must be positive, threshold >= 0")


def mobil_preset(name: str, idm: IdmParams, cooperative: bool = False) -> MobilParams:
    """Named parameter bundles; b_safe is 0.7*alpha (alpha when cooperative)."""
    if name == "normal":
        p, da_t = 0.5, 0.4
    elif name == "aggressive":
        p, da_t = 1.0, 0.2
    else:
        raise ValueError(f"unknown preset {name!r}")
    b_safe = idm.alpha if cooperative else 0.7 * idm.alpha
    return MobilParams(
        politeness=p,
        b_safe=b_safe,
        delta_a_threshold=da_t,
        cooperative=cooperative,
    )


@dataclass(frozen=True)
class FollowerInfo:
    """An affected follower: its speed and its leader before/after the change.

    virtual_before is the projected (virtual) leader the follower is
    already yielding to, if any; it enters the before-change acceleration
    through the cooperative model and disappears after the change (the
    intent has then become a real vehicle)."""

    speed: float
    front_before: Optional[FrontTarget]
    front_after: Optional[FrontTarget]
    virtual_before: Optional[FrontTarget] = None


@dataclass(frozen=True)
class CandidateLane:
    lane_id: int
    new_front: Optional[FrontTarget]  # ego's leader after the change
    new_follower: Optional[FollowerInfo]
    old_follower: Optional[FollowerInfo]


@dataclass(frozen=True)
class LaneChangeContext:
    """Snapshot of everything a lane-change decision may read."""

    ego_speed: float
    ego_front_before: Optional[FrontTarget]
    candidates: tuple[CandidateLane, ...]  # evaluated in order, inner first


@dataclass(frozen=True)
class LaneDecision:
    target: Optional[int]  # lane to change to, or None to stay
    blocked_desire: Optional[int]  # incentive passed but safety/guard vetoed


# below this the new follower counts as standing still for safety purposes;
# at such speeds the kinematic braking demand is negligible even for tiny
# gaps, where the acceleration-based criterion wildly overestimates it
STANDSTILL_SPEED = 0.15

# never start a change toward a standing vehicle this close ahead in the
# target lane; stalling there would leave the ego wedged across both lanes
JAM_VETO_RANGE = 2.0
JAM_SPEED = 0.05


def safety_criterion(new_rear_accel_after: float, b_safe: float) -> bool:
    """New follower must not brake harder than b_safe."""
    return new_rear_accel_after >= -b_safe


def incentive_criterion(
    da_c: float, da_n: float, da_o: float, p: float, da_threshold: float
) -> bool:
    """MOBIL incentive inequality; strict, so a tie means stay."""
    return da_c + p * (da_n + da_o) > da_threshold


def _accel(v: float, front: Optional[FrontTarget], idm: IdmParams, wheelbase: float,
           max_decel: float, virtual: Optional[FrontTarget] = None) -> float:
    s0 = effective_jam_distance(
        front.front_speed if front is not None else None, idm, wheelbase
    )
    a = idm_acceleration(v, front, idm, effective_s0=s0, max_decel=max_decel)
    if virtual is not None and virtual.gap > 0.0:
        s0_v = effective_jam_distance(virtual.front_speed, idm, wheelbase)
        a_virt = idm_acceleration(v, virtual, idm, effective_s0=s0_v,
                                  max_decel=max_decel)
        a = min(virtual.weight * a_virt, a)
    return a


def _cmobil_guard(gap: float, closing: float, idm: IdmParams, gamma: float) -> bool:
    """Low-speed anti-crash guard: gap must exceed s0 + gamma * closing rate."""
    return gap > idm.s0 + gamma * max(closing, 0.0)


def evaluate_lane_change(
    context: LaneChangeContext,
    mobil: MobilParams,
    idm: IdmParams,
    wheelbase: float,
    max_decel: float = 2.0,
    require_incentive: bool = True,
) -> LaneDecision:
    """Evaluate candidates in order; first one passing all criteria wins.

    Criteria: follower safety, the incentive inequality, an escape-distance
    gap guard on the new front, and (cooperative only) the time-headway
    guard against both new front and new rear.
    """
    b_safe = idm.alpha if mobil.cooperative else mobil.b_safe
    v = context.ego_speed
    a_c_before = _accel(v, context.ego_front_before, idm, wheelbase, max_decel)
    blocked: Optional[int] = None
    for cand in context.candidates:
        # overlap with the target lane is disqualifying, not a MOBIL matter
        if cand.new_front is not None and cand.new_front.gap <= 0.0:
            continue
        if (cand.new_front is not None
                and cand.new_front.front_speed <= JAM_SPEED
                and cand.new_front.gap < JAM_VETO_RANGE):
            continue
        nf = cand.new_follower
        if nf is not None and nf.front_after is not None and nf.front_after.gap <= 0.0:
            continue

        a_c_after = _accel(v, cand.new_front, idm, wheelbase, max_decel)
        da_c = a_c_after - a_c_before
        da_n = da_o = 0.0
        if nf is not None:
            da_n = _accel(nf.speed, nf.front_after, idm, wheelbase, max_decel) - _accel(
                nf.speed, nf.front_before, idm, wheelbase, max_decel,
                virtual=nf.virtual_before,
            )
        of = cand.old_follower
        if of is not None:
            da_o = _accel(of.speed, of.front_after, idm, wheelbase, max_decel) - _accel(
                of.speed, of.front_before, idm, wheelbase, max_decel,
                virtual=of.virtual_before,
            )
        incentive = incentive_criterion(
            da_c, da_n, da_o, mobil.politeness, mobil.delta_a_threshold
        )
        if require_incentive and not incentive:
            if blocked is None and da_c > mobil.delta_a_threshold:
                blocked = cand.lane_id
            continue

        safe = True
        if nf is not None and nf.front_after is not None:
            if nf.speed <= STANDSTILL_SPEED:
                # a stationary follower cannot be forced to brake; the
                # positive-gap check above already rules out overlap
                safe = True
            else:
                safe = safety_criterion(
                    _accel(nf.speed, nf.front_after, idm, wheelbase, max_decel),
                    b_safe,
                )
        if safe and cand.new_front is not None:
            s0_hat = effective_jam_distance(
                cand.new_front.front_speed, idm, wheelbase
            )
            safe = cand.new_front.gap > s0_hat
        if safe and mobil.cooperative:
            if cand.new_front is not None:
                safe = _cmobil_guard(
                    cand.new_front.gap, cand.new_front.approach_rate, idm, mobil.gamma
                )
            if safe and nf is not None and nf.front_after is not None:
                safe = _cmobil_guard(
                    nf.front_after.gap, nf.speed - v, idm, mobil.gamma
                )
        if safe and (incentive or not require_incentive):
            return LaneDecision(target=cand.lane_id, blocked_desire=None)
        # a blocked desire is driven by the ego's own advantage: the
        # change would clearly help the ego but followers (or the gap
        # guards) currently veto it
        if blocked is None and da_c > mobil.delta_a_threshold:
            blocked = cand.lane_id
    return LaneDecision(target=None, blocked_desire=blocked)


def smoothstep(u: float) -> float:
    u = min(max(u, 0.0), 1.0)
    return u * u * (3.0 - 2.0 * u)


# minimum speed used to size the blend path, so a change started from
# standstill still has a finite longitudinal footprint
MIN_BLEND_SPEED = 0.05


def lane_change_path(
    from_lane: int, to_lane: int, v_at_start: float, gamma: float
) -> LaneChange:
    """Plan the lateral blend for an adjacent-lane change.

    The lateral offset follows a smoothstep in progress u, completed over
    a longitudinal distance of roughly one lane-change time at the entry
    speed. Endpoints sit exactly on the two centerlines with zero lateral
    slope.
    """
    if abs(to_lane - from_lane) != 1:
        raise ValueError("lane changes are between adjacent lanes only")
    distance = max(v_at_start, MIN_BLEND_SPEED) * gamma
    return LaneChange(from_lane=from_lane, to_lane=to_lane, progress=0.0,
                      distance=distance)
