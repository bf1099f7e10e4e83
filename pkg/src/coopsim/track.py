"""Closed multi-lane track geometry with arc-length parameterization.

The default layout is a "stadium" loop: two parallel straights joined by
two semicircular ends. Lanes are laterally offset copies of the innermost
centerline, ordered inner to outer, so an offset of d adds exactly 2*pi*d
to the perimeter.

Conventions:
- arc length s runs counter-clockwise, s = 0 at each lane's start pose
- the left normal of the tangent is (-sin(theta), cos(theta)); lateral
  offsets and lateral errors are signed positive to the left
- curvature is positive for left (counter-clockwise) turns
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Optional

TWO_PI = 2.0 * math.pi


class TrackBuildError(ValueError):
    """Requested track geometry is infeasible or inconsistent."""


class LostVehicleError(RuntimeError):
    """Query point too far from the lane centerline to project."""


@dataclass(frozen=True)
class Segment:
    """One centerline primitive: a straight or a circular arc.

    kind: "straight" or "arc"
    length: arc length of the segment [m]
    x0, y0, theta0: start pose
    curvature: 0 for straights, +-1/radius for arcs
    s0: cumulative arc length at the segment start
    """

    kind: str
    length: float
    x0: float
    y0: float
    theta0: float
    curvature: float
    s0: float

    def pose_at(self, u: float) -> tuple[float, float, float]:
        """Pose at local arc length u in [0, length]."""
        if self.kind == "straight":
            return (
                self.x0 + u * math.cos(self.theta0),
                self.y0 + u * math.sin(self.theta0),
                self.theta0,
            )
        k = self.curvature
        r = 1.0 / abs(k)
        cx, cy = self._center()
        theta = self.theta0 + k * u
        if k > 0.0:
            return (cx + r * math.sin(theta), cy - r * math.cos(theta), theta)
        return (cx - r * math.sin(theta), cy + r * math.cos(theta), theta)

    def _center(self) -> tuple[float, float]:
        r = 1.0 / abs(self.curvature)
        nx, ny = -math.sin(self.theta0), math.cos(self.theta0)
        if self.curvature > 0.0:
            return (self.x0 + r * nx, self.y0 + r * ny)
        return (self.x0 - r * nx, self.y0 - r * ny)

    def project(self, px: float, py: float) -> tuple[float, float]:
        """Return (local s, squared distance) of the closest point to (px, py).

        Local s is clamped to [0, length].
        """
        if self.kind == "straight":
            dx, dy = math.cos(self.theta0), math.sin(self.theta0)
            t = (px - self.x0) * dx + (py - self.y0) * dy
            t = min(max(t, 0.0), self.length)
            cx = self.x0 + t * dx
            cy = self.y0 + t * dy
            return t, (px - cx) ** 2 + (py - cy) ** 2
        k = self.curvature
        r = 1.0 / abs(k)
        cx, cy = self._center()
        # angle of the query point around the center, measured as local s
        phi = math.atan2(py - cy, px - cx)
        if k > 0.0:
            phi0 = self.theta0 - 0.5 * math.pi
            u = ((phi - phi0) % TWO_PI) * r
        else:
            phi0 = self.theta0 + 0.5 * math.pi
            u = ((phi0 - phi) % TWO_PI) * r
        candidates = [0.0, self.length]
        if u <= self.length:
            candidates.append(u)
        best = None
        for t in candidates:
            x, y, _ = self.pose_at(t)
            d2 = (px - x) ** 2 + (py - y) ** 2
            if best is None or d2 < best[1] - 1e-15:
                best = (t, d2)
        return best


@dataclass(frozen=True)
class ReferenceProjection:
    """Orthogonal projection of a point onto a lane centerline."""

    s_d: float
    x_d: float
    y_d: float
    theta_d: float
    kappa: float
    lateral_error: float


@dataclass(frozen=True)
class Lane:
    """A closed lane centerline made of straight/arc segments."""

    id: int
    length: float
    segments: tuple[Segment, ...]
    width: float
    _s_starts: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_s_starts", tuple(seg.s0 for seg in self.segments))

    def segment_at(self, s: float) -> tuple[Segment, float]:
        s = s % self.length
        i = bisect.bisect_right(self._s_starts, s) - 1
        seg = self.segments[i]
        return seg, s - seg.s0


@dataclass(frozen=True)
class Track:
    """Ordered inner-to-outer lanes sharing segment topology."""

    lanes: tuple[Lane, ...]
    lane_spacing: float
    checkpoint_s: tuple[float, ...]

    @property
    def n_lanes(self) -> int:
        return len(self.lanes)


@dataclass(frozen=True)
class TrackSpec:
    """Construction parameters for a stadium track."""

    n_lanes: int = 2
    lane_lengths: tuple[float, ...] = (16.0, 17.0)
    lane_spacing: float = 1.0 / TWO_PI
    end_radius: float = 0.8
    lane_width: float = 0.25


def build_track(spec: TrackSpec) -> Track:
    """Build the stadium track; fails rather than silently approximating."""
    if spec.n_lanes < 2:
        raise TrackBuildError("at least two lanes required")
    if spec.lane_spacing <= 0.0:
        raise TrackBuildError("lane_spacing must be positive")
    if len(spec.lane_lengths) != spec.n_lanes:
        raise TrackBuildError(
            f"expected {spec.n_lanes} lane lengths, got {len(spec.lane_lengths)}"
        )
    r0 = spec.end_radius
    if r0 <= 0.0:
        raise TrackBuildError("end_radius must be positive")
    inner = spec.lane_lengths[0]
    straight = 0.5 * (inner - TWO_PI * r0)
    if straight <= 0.0:
        raise TrackBuildError(
            f"end_radius {r0} too large for inner perimeter {inner}"
        )
    # offset closed curves differ in perimeter by exactly 2*pi*spacing
    for i, target in enumerate(spec.lane_lengths):
        implied = inner + TWO_PI * spec.lane_spacing * i
        if abs(implied - target) > 1e-6:
            raise TrackBuildError(
                f"lane {i} target length {target} inconsistent with spacing "
                f"(offset geometry implies {implied:.9f})"
            )
    lanes = []
    for i in range(spec.n_lanes):
        r = r0 + i * spec.lane_spacing
        y0 = -i * spec.lane_spacing  # outer lanes sit right of the CCW loop
        segs = []
        s = 0.0
        x, y, th = 0.0, y0, 0.0
        for kind, length, k in (
            ("straight", straight, 0.0),
            ("arc", math.pi * r, 1.0 / r),
            ("straight", straight, 0.0),
            ("arc", math.pi * r, 1.0 / r),
        ):
            seg = Segment(kind, length, x, y, th, k, s)
            segs.append(seg)
            x, y, th = seg.pose_at(length)
            th = _wrap_angle(th)
            s += length
        lane = Lane(id=i, length=s, segments=tuple(segs), width=spec.lane_width)
        if abs(lane.length - spec.lane_lengths[i]) > 1e-6:
            raise TrackBuildError(
                f"lane {i} built length {lane.length} != target {spec.lane_lengths[i]}"
            )
        lanes.append(lane)
    return Track(
        lanes=tuple(lanes),
        lane_spacing=spec.lane_spacing,
        checkpoint_s=tuple(0.0 for _ in lanes),
    )


def pose_at(lane: Lane, s: float) -> tuple[float, float, float, float]:
    """(x, y, theta, kappa) at arc length s (taken modulo lane length)."""
    seg, u = lane.segment_at(s)
    x, y, th = seg.pose_at(u)
    return x, y, _wrap_angle(th), seg.curvature


def project_to_lane(
    point: tuple[float, float],
    lane_id: int,
    track: Track,
    max_distance: float = 1.0,
) -> ReferenceProjection:
    """Globally closest point on the lane's closed centerline.

    Ties broken by smallest s. Raises LostVehicleError beyond max_distance.
    """
    lane = track.lanes[lane_id]
    px, py = point
    best_s = None
    best_d2 = math.inf
    for seg in lane.segments:
        u, d2 = seg.project(px, py)
        s = (seg.s0 + u) % lane.length
        if d2 < best_d2 - 1e-15 or (abs(d2 - best_d2) <= 1e-15 and s < best_s):
            best_d2 = d2
            best_s = s
    if best_d2 > max_distance * max_distance:
        raise LostVehicleError(
            f"point {point} is {math.sqrt(best_d2):.3f} m from lane {lane_id}"
        )
    x, y, th, kappa = pose_at(lane, best_s)
    nx, ny = -math.sin(th), math.cos(th)
    lateral = (px - x) * nx + (py - y) * ny
    return ReferenceProjection(best_s, x, y, th, kappa, lateral)


def gap_along_lane(s_rear: float, s_front: float, lane: Lane, body_length: float) -> float:
    """Wrap-aware bumper-to-bumper distance from rear to front along the lane."""
    return (s_front - s_rear) % lane.length - body_length


def offset_pose(
    lane: Lane, s: float, offset_left: float
) -> tuple[float, float, float, float]:
    """Pose and curvature of the parallel curve offset_left meters to the left.

    The offset curve shares tangent direction; its curvature is
    kappa / (1 - offset * kappa).
    """
    x, y, th, kappa = pose_at(lane, s)
    nx, ny = -math.sin(th), math.cos(th)
    denom = 1.0 - offset_left * kappa
    if denom <= 0.0:
        raise TrackBuildError("lateral offset exceeds radius of curvature")
    return x + offset_left * nx, y + offset_left * ny, th, kappa / denom


def map_s_between_lanes(s: float, from_lane: Lane, to_lane: Lane) -> float:
    """Map an arc-length position across lanes by equal length fraction."""
    return (s % from_lane.length) * to_lane.length / from_lane.length


def sample_polyline(track: Track, resolution: float = 0.05):
    """Sample all lane centerlines; rows of (lane_id, s, x, y, theta, kappa)."""
    rows = []
    for lane in track.lanes:
        n = max(2, int(math.ceil(lane.length / resolution)))
        for i in range(n):
            s = i * lane.length / n
            x, y, th, k = pose_at(lane, s)
            rows.append((lane.id, s, x, y, th, k))
    return rows


def export_polyline_csv(track: Track, path, resolution: float = 0.05) -> None:
    with open(path, "w") as f:
        f.write("lane_id,s,x,y,theta,kappa\n")
        for lane_id, s, x, y, th, k in sample_polyline(track, resolution):
            f.write(f"{lane_id},{s!r},{x!r},{y!r},{th!r},{k!r}\n")


def _wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = (a + math.pi) % TWO_PI - math.pi
    return math.pi if a == -math.pi else a
