"""Intent sharing and neighbor discovery.

A vehicle that wants to change lanes but is blocked projects a virtual
counterpart of itself onto the target lane, weighted by how urgent the
change is. Vehicles within visibility range fold that virtual vehicle
into their longitudinal control.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .longitudinal import FrontTarget
from .track import Lane, Track, map_s_between_lanes


@dataclass(frozen=True)
class CoopParams:
    visibility_range: float = 2.0  # c [m]
    urgency_gain: float = 0.5  # 1/m; default 1/c gives a linear ramp

    def __post_init__(self):
        if self.visibility_range <= 0.0 or self.urgency_gain <= 0.0:
            raise ValueError("visibility range and urgency gain must be positive")


@dataclass(frozen=True)
class VirtualVehicle:
    owner: int
    lane: int  # target lane of the intended change
    s: float  # arc length on that lane
    v: float
    weight: float
    created_tick: int

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError("weight must be in [0, 1]")


@dataclass(frozen=True)
class LaneNeighbors:
    front: Optional[FrontTarget] = None
    rear: Optional[FrontTarget] = None  # approach_rate is rear's closing rate
    front_id: Optional[int] = None
    rear_id: Optional[int] = None
    virtual_front: Optional[FrontTarget] = None
    virtual_rear: Optional[FrontTarget] = None
    trail_gap: Optional[float] = None  # gap to the nearest virtual behind


@dataclass(frozen=True)
class NeighborView:
    """Per-lane nearest neighbors as seen by one vehicle, one tick."""

    lanes: dict[int, LaneNeighbors] = field(default_factory=dict)

    def on(self, lane_id: int) -> LaneNeighbors:
        return self.lanes.get(lane_id, LaneNeighbors())


def urgency_weight(s_gap_to_front: float, c: float, kappa_u: float) -> float:
    """Urgency of a blocked lane change: 1 when boxed in, 0 beyond range c."""
    if c <= 0.0:
        raise ValueError("visibility range c must be positive")
    return min(max(kappa_u * (c - s_gap_to_front), 0.0), 1.0)


def project_intent(
    owner: int,
    lane: int,
    s: float,
    v: float,
    target_lane: int,
    gap_to_front: Optional[float],
    coop: CoopParams,
    track: Track,
    tick: int,
) -> VirtualVehicle:
    """Project the ego's intended state onto the target lane.

    The virtual vehicle sits laterally adjacent to its owner (equal
    fraction of lane length) at the owner's speed, weighted by the
    urgency of the blockage on the owner's current lane.
    """
    gap = coop.visibility_range if gap_to_front is None else gap_to_front
    w = urgency_weight(gap, coop.visibility_range, coop.urgency_gain)
    s_target = map_s_between_lanes(s, track.lanes[lane], track.lanes[target_lane])
    return VirtualVehicle(
        owner=owner, lane=target_lane, s=s_target, v=v, weight=w, created_tick=tick
    )


@dataclass(frozen=True)
class FleetVehicle:
    """The slice of a vehicle's state that neighbor discovery reads."""

    id: int
    lane: int
    s: float
    v: float
    to_lane: Optional[int] = None  # set while a lane change is in flight
    s_on_to_lane: Optional[float] = None


def _lane_positions(vehicle: FleetVehicle, track: Track) -> list[tuple[int, float]]:
    """Lanes a vehicle occupies for gap purposes (both, mid-change)."""
    out = [(vehicle.lane, vehicle.s)]
    if vehicle.to_lane is not None and vehicle.to_lane != vehicle.lane:
        s_to = vehicle.s_on_to_lane
        if s_to is None:
            s_to = map_s_between_lanes(
                vehicle.s, track.lanes[vehicle.lane], track.lanes[vehicle.to_lane]
            )
        out.append((vehicle.to_lane, s_to))
    return out


def _arc_distance(s_a: float, s_b: float, length: float) -> float:
    d = (s_b - s_a) % length
    return min(d, length - d)


def neighbors_within_range(
    ego: FleetVehicle, fleet: list[FleetVehicle], c: float, track: Track
) -> set[int]:
    """Vehicle ids whose arc distance to the ego (projected onto the
    ego's lane) is at most c. Symmetric in the ego's lane metric."""
    ego_lane = track.lanes[ego.lane]
    out = set()
    for other in fleet:
        if other.id == ego.id:
            continue
        s_other = map_s_between_lanes(
            other.s, track.lanes[other.lane], ego_lane
        )
        if _arc_distance(ego.s, s_other, ego_lane.length) <= c:
            out.add(other.id)
    return out


def build_neighbor_view(
    ego: FleetVehicle,
    fleet: list[FleetVehicle],
    virtuals: list[VirtualVehicle],
    lanes_of_interest: list[int],
    track: Track,
    body_length: float,
    coop: Optional[CoopParams] = None,
) -> NeighborView:
    """Nearest real and virtual front/rear per lane of interest.

    Mid-change vehicles count on both of their lanes. Virtual vehicles are
    visible only when their owner is within range, and a vehicle never
    sees its own virtuals.
    """
    in_range: Optional[set[int]] = None
    if coop is not None:
        in_range = neighbors_within_range(ego, fleet, coop.visibility_range, track)
    lanes: dict[int, LaneNeighbors] = {}
    for lane_id in lanes_of_interest:
        lane = track.lanes[lane_id]
        ego_s = _ego_s_on(ego, lane_id, track)
        best_front = best_rear = None  # (gap, id, speed)
        for other in fleet:
            if other.id == ego.id:
                continue
            for olane, os in _lane_positions(other, track):
                if olane != lane_id:
                    continue
                fgap = (os - ego_s) % lane.length - body_length
                rgap = (ego_s - os) % lane.length - body_length
                if fgap <= rgap:
                    if best_front is None or fgap < best_front[0]:
                        best_front = (fgap, other.id, other.v)
                else:
                    if best_rear is None or rgap < best_rear[0]:
                        best_rear = (rgap, other.id, other.v)
        vfront = vrear = None  # (gap, VirtualVehicle)
        for vv in virtuals:
            if vv.owner == ego.id or vv.lane != lane_id:
                continue
            if in_range is not None and vv.owner not in in_range:
                continue
            fgap = (vv.s - ego_s) % lane.length - body_length
            rgap = (ego_s - vv.s) % lane.length - body_length
            if fgap <= rgap:
                if vfront is None or fgap < vfront[0]:
                    vfront = (fgap, vv)
            else:
                if vrear is None or rgap < vrear[0]:
                    vrear = (rgap, vv)
        lanes[lane_id] = LaneNeighbors(
            front=FrontTarget(best_front[0], ego.v - best_front[2], best_front[2])
            if best_front
            else None,
            rear=FrontTarget(best_rear[0], best_rear[2] - ego.v, ego.v)
            if best_rear
            else None,
            front_id=best_front[1] if best_front else None,
            rear_id=best_rear[1] if best_rear else None,
            virtual_front=FrontTarget(
                vfront[0], ego.v - vfront[1].v, vfront[1].v,
                weight=vfront[1].weight, is_virtual=True,
            )
            if vfront
            else None,
            virtual_rear=FrontTarget(
                vrear[0], vrear[1].v - ego.v, ego.v,
                weight=vrear[1].weight, is_virtual=True,
            )
            if vrear
            else None,
            trail_gap=vrear[0] if vrear else None,
        )
    return NeighborView(lanes=lanes)


def _ego_s_on(ego: FleetVehicle, lane_id: int, track: Track) -> float:
    for lane, s in _lane_positions(ego, track):
        if lane == lane_id:
            return s
    return map_s_between_lanes(
        ego.s, track.lanes[ego.lane], track.lanes[lane_id]
    )
