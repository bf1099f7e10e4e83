"""Tick loop, scenario scripting, collision detection, metrics, recording.

Update ordering inside one tick has four phases, each completed for all
vehicles before the next begins:

1. sense    - emulate measurements and run the per-vehicle estimator
2. plan     - neighbor views, lane-change decisions, longitudinal models,
              all against the phase-start snapshot; intents collected
3. control  - lateral tracking law + velocity PID produce commands
4. integrate- kinematics commit all new states simultaneously; the
              intent registry and lane assignments commit here too

No vehicle ever observes another vehicle's same-tick update.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import coordination as coord
from . import estimation as est
from .config import ScenarioConfig
from .coordination import CoopParams, FleetVehicle, VirtualVehicle
from .dynamics import LaneChange, VehicleLimits, VehicleState, step_kinematics
from .lateral import (
    CandidateLane,
    FollowerInfo,
    LaneChangeContext,
    MobilParams,
    evaluate_lane_change,
    lane_change_path,
    mobil_preset,
    smoothstep,
)
from .longitudinal import (
    FrontTarget,
    IdmParams,
    IDM_AGGRESSIVE,
    IDM_NORMAL,
    boosted_desired_speed,
    cidm_acceleration,
    effective_jam_distance,
    idm_acceleration,
)
from .track import (
    Track,
    build_track,
    map_s_between_lanes,
    offset_pose,
    pose_at,
    project_to_lane,
)
from .tracking import (
    PidParams,
    PidState,
    TrackerParams,
    reference_steering,
    steering_command,
    target_point,
    velocity_pid,
)

WAITING_SPEED = 0.05  # below this a vehicle counts as waiting [m/s]
DESIRE_TIMEOUT_FACTOR = 10.0  # abandon a blocked intent after 10*gamma
COMMIT_LATERAL_TOL = 0.03  # max offset from the new centerline to commit [m]
CLEAR_LATERAL = 0.12  # bodies can no longer touch beyond this offset [m]


@dataclass
class GamifiedControl:
    mode: str = "automatic"  # manual | semi_automatic | automatic
    throttle: float = 0.0
    steer: float = 0.0
    speed_setpoint: float = 0.0
    lane_request: Optional[int] = None  # -1 left (inner), +1 right (outer)


@dataclass
class SimVehicle:
    id: int
    state: VehicleState
    idm: IdmParams
    mobil: MobilParams
    policy: str  # egocentric | cooperative | gamified
    pid: PidState = field(default_factory=PidState)
    estimator: Optional[est.EstimatorState] = None
    stopped: bool = False
    cooldown_until: float = -1.0
    desire_lane: Optional[int] = None
    desire_since: int = 0
    v_setpoint: float = 0.0
    accel_cmd: float = 0.0
    v_cmd: float = 0.0
    psi_cmd: float = 0.0
    obs: Optional[tuple[float, float, float, float, float]] = None
    s_obs: float = 0.0
    game: Optional[GamifiedControl] = None


@dataclass(frozen=True)
class CollisionEvent:
    tick: int
    a: int
    b: int


@dataclass
class RunRecord:
    """Time-indexed trajectory log plus the event stream."""

    config: dict
    times: np.ndarray  # (n_samples,)
    lane: np.ndarray  # (n_samples, n)
    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    v: np.ndarray
    psi: np.ndarray
    lc_progress: np.ndarray
    accel_cmd: np.ndarray
    events: list[dict]
    collisions: list[CollisionEvent]
    lane_lengths: tuple[float, ...]
    command_log: list[dict] = field(default_factory=list)

    @property
    def n_vehicles(self) -> int:
        return self.lane.shape[1]

    @property
    def duration(self) -> float:
        return float(self.times[-1]) if len(self.times) else 0.0


@dataclass(frozen=True)
class ThroughputResult:
    mean: float
    std: float
    window: float
    checkpoint_s: float

    def __str__(self) -> str:
        return f"{self.mean:.3f} ± {self.std:.3f}"


class World:
    """Mutable simulation state for one scenario run."""

    def __init__(self, config: ScenarioConfig):
        config.validate()
        self.config = config
        self.track: Track = build_track(config.track)
        self.limits = VehicleLimits(
            wheelbase=config.limits.wheelbase,
            max_steer=math.radians(config.limits.max_steer_deg),
            max_steer_rate=config.limits.max_steer_rate,
            max_speed=config.limits.max_speed,
            max_accel=config.limits.max_accel,
            max_decel=config.limits.max_decel,
            body_length=config.limits.body_length,
            body_width=config.limits.body_width,
        )
        self.coop = CoopParams(
            visibility_range=config.coop.visibility_range,
            urgency_gain=config.coop.urgency_gain,
        )
        self.tracker = TrackerParams(
            l1=self.limits.wheelbase, l2=2.3 * self.limits.wheelbase
        )
        self.pid_params = PidParams()
        self.rng = np.random.default_rng(config.seed)
        self.tick = 0
        self.virtuals: dict[int, VirtualVehicle] = {}
        self.events: list[dict] = []
        self.collisions: list[CollisionEvent] = []
        self.command_log: list[dict] = []
        self._pending_events = list(config.events)
        self._pending_commands: list[dict] = []
        self.vehicles = self._place_vehicles()

    # -- setup ---------------------------------------------------------

    def _idm_params(self) -> IdmParams:
        base = IDM_NORMAL if self.config.vehicles.preset == "normal" else IDM_AGGRESSIVE
        if self.config.idm_overrides:
            base = replace(base, **{k: float(v) for k, v in
                                    self.config.idm_overrides.items()})
        return base

    def _place_vehicles(self) -> list[SimVehicle]:
        cfg = self.config
        if cfg.vehicles.placement != "even":
            raise ValueError(f"unknown placement {cfg.vehicles.placement!r}")
        idm = self._idm_params()
        cooperative = cfg.vehicles.policy == "cooperative"
        mobil = mobil_preset(cfg.vehicles.preset, idm, cooperative=cooperative)
        mobil = replace(mobil, gamma=cfg.coop.gamma)
        n = cfg.vehicles.count
        n_lanes = self.track.n_lanes
        per_lane = [n // n_lanes + (1 if i < n % n_lanes else 0)
                    for i in range(n_lanes)]
        vehicles = []
        vid = 0
        for lane_id, count in enumerate(per_lane):
            lane = self.track.lanes[lane_id]
            for k in range(count):
                s = k * lane.length / max(count, 1)
                x, y, th, _ = pose_at(lane, s)
                policy = cfg.vehicles.policy
                game = None
                if vid in cfg.vehicles.gamified_ids:
                    policy = "gamified"
                    game = GamifiedControl()
                state = VehicleState(x=x, y=y, theta=th, v=0.0, psi=0.0,
                                     lane=lane_id, s=s)
                estimator = None
                if cfg.sensing.mode == "estimated":
                    estimator = est.EstimatorState.initial(x, y, th)
                vehicles.append(
                    SimVehicle(id=vid, state=state, idm=idm, mobil=mobil,
                               policy=policy, estimator=estimator,
                               s_obs=s, game=game)
                )
                vid += 1
        return vehicles

    # -- external command interface (gamified mode) --------------------

    def queue_command(self, command: dict) -> Optional[dict]:
        """Queue a command for application at the next tick boundary.

        Returns an error event dict if the command is rejected."""
        vid = command.get("vehicle_id")
        if not isinstance(vid, int) or not 0 <= vid < len(self.vehicles):
            return {"type": "error", "tick": self.tick,
                    "reason": f"unknown vehicle {vid}"}
        veh = self.vehicles[vid]
        if veh.game is None:
            return {"type": "error", "tick": self.tick,
                    "reason": f"vehicle {vid} is not gamified"}
        self._pending_commands.append(command)
        return None

    def _apply_commands(self) -> None:
        for cmd in self._pending_commands:
            veh = self.vehicles[cmd["vehicle_id"]]
            game = veh.game
            self.command_log.append({"tick": self.tick, **cmd})
            kind = cmd.get("kind")
            if kind == "mode":
                mode = cmd.get("mode", "automatic")
                if mode in ("manual", "semi_automatic", "automatic"):
                    game.mode = mode
                    game.lane_request = None
                    if mode == "semi_automatic":
                        game.speed_setpoint = veh.state.v
                    self.events.append({"type": "mode", "tick": self.tick,
                                        "vehicle": veh.id, "mode": mode})
            elif kind == "manual":
                game.throttle = min(max(float(cmd.get("throttle", 0.0)), -1.0), 1.0)
                game.steer = min(max(float(cmd.get("steer", 0.0)), -1.0), 1.0)
            elif kind == "semi_automatic":
                if "speed_setpoint" in cmd:
                    game.speed_setpoint = min(
                        max(float(cmd["speed_setpoint"]), 0.0),
                        self.limits.max_speed,
                    )
                if cmd.get("lane_request") in (-1, 1):
                    game.lane_request = int(cmd["lane_request"])
            elif kind == "stop":
                veh.stopped = True
                self.events.append({"type": "stop", "tick": self.tick,
                                    "vehicle": veh.id})
            elif kind == "resume":
                veh.stopped = False
                self.events.append({"type": "resume", "tick": self.tick,
                                    "vehicle": veh.id})
            else:
                self.events.append({"type": "error", "tick": self.tick,
                                    "vehicle": veh.id,
                                    "reason": f"unknown command kind {kind!r}"})
        self._pending_commands.clear()

    # -- phases --------------------------------------------------------

    def _sense(self, dt: float) -> None:
        """Estimator update; s_obs is refreshed by the control phase."""
        cfg = self.config.sensing
        tracked = [v for v in self.vehicles if v.estimator is not None]
        for veh in self.vehicles:
            if veh.estimator is None:
                st = veh.state
                veh.obs = (st.x, st.y, st.theta, st.v, st.psi)
                veh.s_obs = st.s
        if not tracked:
            return
        z = np.array([[v.state.x, v.state.y, v.state.theta] for v in tracked])
        if cfg.sigma_xy > 0.0 or cfg.sigma_theta > 0.0:
            noise = self.rng.normal(0.0, 1.0, size=(len(tracked), 3))
            z[:, 0] += cfg.sigma_xy * noise[:, 0]
            z[:, 1] += cfg.sigma_xy * noise[:, 1]
            z[:, 2] = est._wrap_array(z[:, 2] + cfg.sigma_theta * noise[:, 2])
        means = np.array([v.estimator.mean for v in tracked])
        covs = np.array([v.estimator.cov for v in tracked])
        means, covs = est.batch_ekf_predict(means, covs, dt,
                                            self.limits.wheelbase)
        means, covs = est.batch_ekf_update(means, covs, z)
        for k, veh in enumerate(tracked):
            veh.estimator = est.EstimatorState(mean=means[k], cov=covs[k])
            m = means[k]
            veh.obs = (float(m[0]), float(m[1]), float(m[2]),
                       float(m[3]), float(m[4]))

    def _fleet_snapshot(self) -> list[FleetVehicle]:
        out = []
        for veh in self.vehicles:
            lc = veh.state.lane_change
            to_lane = s_to = None
            if lc is not None:
                to_lane = lc.to_lane
                s_to = map_s_between_lanes(
                    veh.s_obs,
                    self.track.lanes[veh.state.lane],
                    self.track.lanes[lc.to_lane],
                )
            out.append(
                FleetVehicle(id=veh.id, lane=veh.state.lane, s=veh.s_obs,
                             v=veh.obs[3], to_lane=to_lane, s_on_to_lane=s_to)
            )
        return out

    def _adjacent_lanes(self, lane_id: int) -> list[int]:
        # inner lane first so it wins ties deterministically
        return [l for l in (lane_id - 1, lane_id + 1) if 0 <= l < self.track.n_lanes]

    def _plan(self, dt_plan: float) -> None:
        fleet = self._fleet_snapshot()
        virtual_list = list(self.virtuals.values())
        new_virtuals: dict[int, VirtualVehicle] = {}
        t = self.tick * self.config.dt
        for veh in self.vehicles:
            st = veh.state
            ego = fleet[veh.id]
            if veh.game is not None and veh.game.mode == "manual":
                continue
            lanes_of_interest = [st.lane] + self._adjacent_lanes(st.lane)
            if st.lane_change is not None and st.lane_change.to_lane not in lanes_of_interest:
                lanes_of_interest.append(st.lane_change.to_lane)
            cooperative = veh.policy == "cooperative" or (
                veh.game is not None and self.config.vehicles.policy == "cooperative"
            )
            view = coord.build_neighbor_view(
                ego, fleet, virtual_list, lanes_of_interest, self.track,
                self.limits.body_length,
                coop=self.coop if cooperative else None,
            )
            own = view.on(st.lane)
            front = own.front
            front2 = None
            if st.lane_change is not None:
                lc = st.lane_change
                if not lc.reverting:
                    new_front = view.on(lc.to_lane).front
                    if self._should_revert(veh, new_front, own.front):
                        lc = replace(lc, reverting=True)
                        veh.state = replace(st, lane_change=lc)
                        self.events.append({"type": "lane_change_revert",
                                            "tick": self.tick,
                                            "vehicle": veh.id,
                                            "back_to": lc.from_lane})
                # once the change starts the ego follows the new lane's
                # leader; a reverting vehicle follows the old lane again,
                # but keeps the target lane's leader as a constraint while
                # its body still overlaps that lane
                if lc.reverting:
                    front = own.front
                    lat = project_to_lane(
                        (veh.obs[0], veh.obs[1]), lc.to_lane, self.track
                    ).lateral_error
                    if abs(lat) < CLEAR_LATERAL:
                        front2 = view.on(lc.to_lane).front
                else:
                    front = view.on(lc.to_lane).front

            if veh.stopped:
                veh.v_setpoint = 0.0
            else:
                v = ego.v
                s0_hat = effective_jam_distance(
                    front.front_speed if front else None, veh.idm,
                    self.limits.wheelbase,
                )
                v0_override = None
                if veh.game is not None and veh.game.mode == "semi_automatic":
                    v0_override = max(veh.game.speed_setpoint, 1e-6)
                if cooperative:
                    if (own.virtual_rear is not None and v0_override is None
                            and own.trail_gap is not None):
                        v0_override = boosted_desired_speed(
                            veh.idm.v0, own.virtual_rear.weight, own.trail_gap,
                            self.coop.visibility_range, self.limits.max_speed,
                        )
                    a = cidm_acceleration(
                        v, front, own.virtual_front, veh.idm,
                        effective_s0=s0_hat,
                        virtual_effective_s0=effective_jam_distance(
                            own.virtual_front.front_speed, veh.idm,
                            self.limits.wheelbase,
                        ) if own.virtual_front is not None else None,
                        max_decel=self.limits.max_decel,
                        v0_override=v0_override,
                    )
                else:
                    a = idm_acceleration(
                        v, front, veh.idm, effective_s0=s0_hat,
                        max_decel=self.limits.max_decel,
                        v0_override=v0_override,
                    )
                if front2 is not None:
                    a = min(a, idm_acceleration(
                        v, front2, veh.idm,
                        effective_s0=effective_jam_distance(
                            front2.front_speed, veh.idm, self.limits.wheelbase
                        ),
                        max_decel=self.limits.max_decel,
                    ))
                veh.accel_cmd = a
                veh.v_setpoint = min(max(v + a * dt_plan, 0.0),
                                     self.limits.max_speed)

            # ---- lateral decision ----
            if veh.stopped or st.lane_change is not None or t < veh.cooldown_until:
                lc = st.lane_change
                if lc is not None and cooperative and not lc.reverting:
                    # keep broadcasting the intent while executing
                    new_virtuals[veh.id] = self._make_virtual(veh, lc.to_lane, own)
                continue
            decision = None
            if veh.game is not None and veh.game.mode == "semi_automatic":
                if veh.game.lane_request is not None:
                    target = st.lane + veh.game.lane_request
                    veh.game.lane_request = None
                    if 0 <= target < self.track.n_lanes:
                        decision = self._evaluate_candidates(
                            veh, view, [target], require_incentive=False)
                        if not isinstance(decision, int):
                            decision = None
                            self.events.append(
                                {"type": "lane_change_denied", "tick": self.tick,
                                 "vehicle": veh.id, "target": target}
                            )
                    else:
                        self.events.append(
                            {"type": "lane_change_denied", "tick": self.tick,
                             "vehicle": veh.id, "target": target}
                        )
            elif veh.game is None:
                decision = self._evaluate_candidates(
                    veh, view, self._adjacent_lanes(st.lane)
                )

            if isinstance(decision, int):
                lc = lane_change_path(st.lane, decision, ego.v, veh.mobil.gamma)
                veh.state = replace(st, lane_change=lc)
                veh.desire_lane = None
                self.events.append({"type": "lane_change_start", "tick": self.tick,
                                    "vehicle": veh.id, "from": st.lane,
                                    "to": decision})
                if cooperative:
                    new_virtuals[veh.id] = self._make_virtual(veh, decision, own)
            elif decision is not None and cooperative:
                # decision carries the blocked desire lane
                target = decision[1]
                if veh.desire_lane != target:
                    veh.desire_lane = target
                    veh.desire_since = self.tick
                timeout = DESIRE_TIMEOUT_FACTOR * veh.mobil.gamma / self.config.dt
                if self.tick - veh.desire_since <= timeout:
                    new_virtuals[veh.id] = self._make_virtual(veh, target, own)
                else:
                    veh.desire_lane = None
                    self.events.append({"type": "intent_abandoned",
                                        "tick": self.tick, "vehicle": veh.id})
            else:
                veh.desire_lane = None
        self.virtuals = new_virtuals

    def _should_revert(self, veh: SimVehicle, new_front: Optional[FrontTarget],
                       old_front: Optional[FrontTarget]) -> bool:
        """A stalled change backs out when the target lane is a standstill
        wall and the original lane still has room to pull back into."""
        if veh.obs[3] > 2.0 * WAITING_SPEED:
            return False
        if new_front is None or new_front.front_speed > WAITING_SPEED:
            return False
        s0_hat = effective_jam_distance(new_front.front_speed, veh.idm,
                                        self.limits.wheelbase)
        if new_front.gap > s0_hat + self.limits.body_length:
            return False
        if old_front is not None and old_front.gap <= s0_hat:
            return False
        return True

    def _make_virtual(self, veh: SimVehicle, target_lane: int,
                      own: coord.LaneNeighbors) -> VirtualVehicle:
        gap = own.front.gap if own.front is not None else None
        return coord.project_intent(
            veh.id, veh.state.lane, veh.s_obs, veh.obs[3], target_lane,
            gap, self.coop, self.track, self.tick,
        )

    def _evaluate_candidates(self, veh: SimVehicle, view: coord.NeighborView,
                             candidates: list[int],
                             require_incentive: bool = True):
        """Returns target lane (int), (None, desire_lane) when blocked, or None."""
        st = veh.state
        body = self.limits.body_length
        own = view.on(st.lane)
        ego_v = veh.obs[3]
        own_virtual = self.virtuals.get(veh.id)
        cands = []
        for lane_id in candidates:
            nb = view.on(lane_id)
            new_follower = None
            if nb.rear is not None:
                rear_v = nb.rear.approach_rate + ego_v
                front_before = None
                if nb.front is not None:
                    front_before = FrontTarget(
                        gap=nb.front.gap + nb.rear.gap + body,
                        approach_rate=rear_v - nb.front.front_speed,
                        front_speed=nb.front.front_speed,
                    )
                front_after = FrontTarget(
                    gap=nb.rear.gap, approach_rate=rear_v - ego_v,
                    front_speed=ego_v,
                )
                virtual_before = None
                if own_virtual is not None and own_virtual.lane == lane_id:
                    # the follower is already yielding to the ego's
                    # projected intent, which sits where the ego would be
                    virtual_before = FrontTarget(
                        gap=nb.rear.gap, approach_rate=rear_v - ego_v,
                        front_speed=ego_v, weight=own_virtual.weight,
                        is_virtual=True,
                    )
                new_follower = FollowerInfo(rear_v, front_before, front_after,
                                            virtual_before)
            old_follower = None
            if own.rear is not None:
                old_v = own.rear.approach_rate + ego_v
                front_before = FrontTarget(
                    gap=own.rear.gap, approach_rate=old_v - ego_v,
                    front_speed=ego_v,
                )
                front_after = None
                if own.front is not None:
                    front_after = FrontTarget(
                        gap=own.front.gap + own.rear.gap + body,
                        approach_rate=old_v - own.front.front_speed,
                        front_speed=own.front.front_speed,
                    )
                old_follower = FollowerInfo(old_v, front_before, front_after)
            cands.append(CandidateLane(
                lane_id=lane_id, new_front=nb.front,
                new_follower=new_follower, old_follower=old_follower,
            ))
        context = LaneChangeContext(
            ego_speed=ego_v, ego_front_before=own.front,
            candidates=tuple(cands),
        )
        decision = evaluate_lane_change(
            context, veh.mobil, veh.idm, self.limits.wheelbase,
            self.limits.max_decel, require_incentive=require_incentive,
        )
        if decision.target is not None:
            return decision.target
        if decision.blocked_desire is not None:
            return (None, decision.blocked_desire)
        return None

    def _control(self, dt: float) -> None:
        spacing = self.track.lane_spacing
        for veh in self.vehicles:
            st = veh.state
            ox, oy, otheta, ov, _ = veh.obs
            lane = self.track.lanes[st.lane]
            proj = project_to_lane((ox, oy), st.lane, self.track)
            veh.s_obs = proj.s_d
            lc = st.lane_change
            if lc is None:
                ref = proj
            else:
                f = smoothstep(lc.progress)
                # outer lanes sit to the right (negative left offset)
                e = -(lc.to_lane - lc.from_lane) * spacing * f
                x_r, y_r, th_r, k_r = offset_pose(lane, proj.s_d, e)
                nx, ny = -math.sin(th_r), math.cos(th_r)
                lat = (ox - x_r) * nx + (oy - y_r) * ny
                ref = replace(proj, x_d=x_r, y_d=y_r, theta_d=th_r,
                              kappa=k_r, lateral_error=lat)

            if veh.game is not None and veh.game.mode == "manual":
                veh.psi_cmd = veh.game.steer * self.limits.max_steer
                veh.v_cmd = max(veh.game.throttle, 0.0) * self.limits.max_speed
                veh.accel_cmd = 0.0
                continue

            psi_d = reference_steering(ref.kappa, self.tracker.l1)
            x_t, y_t = target_point(ref, psi_d, self.tracker)
            veh.psi_cmd = steering_command(ox, oy, otheta, x_t, y_t, self.tracker)
            # setpoint feedforward plus PID correction; the rate clamp in
            # step_kinematics enforces the physical accel limits
            a = velocity_pid(
                ov, veh.v_setpoint, veh.pid, dt, self.pid_params,
                accel_limits=(-self.limits.max_decel, self.limits.max_accel),
            )
            # a zero setpoint means stop: do not let estimator jitter in
            # the PID correction creep the vehicle forward
            veh.v_cmd = veh.v_setpoint + a * dt if veh.v_setpoint > 0.0 else 0.0

    def _integrate(self, dt: float) -> None:
        t = self.tick * self.config.dt
        new_states = []
        for veh in self.vehicles:
            st = step_kinematics(veh.state, veh.v_cmd, veh.psi_cmd, dt,
                                 self.limits, self.track)
            lc = st.lane_change
            if lc is not None and lc.reverting:
                progress = max(lc.progress - st.v * dt / lc.distance, 0.0)
                proj_from = project_to_lane((st.x, st.y), lc.from_lane, self.track)
                if progress <= 0.0 and abs(proj_from.lateral_error) <= COMMIT_LATERAL_TOL:
                    st = replace(st, s=proj_from.s_d, lane_change=None)
                    veh.cooldown_until = t + veh.mobil.gamma
                    self.events.append({"type": "lane_change_abandon",
                                        "tick": self.tick, "vehicle": veh.id,
                                        "lane": lc.from_lane})
                else:
                    st = replace(st, lane_change=replace(lc, progress=progress))
            elif lc is not None:
                progress = min(lc.progress + st.v * dt / lc.distance, 1.0)
                proj_to = project_to_lane((st.x, st.y), lc.to_lane, self.track)
                # commit only once the body has really converged on the
                # new centerline; a vehicle that stalls mid-change keeps
                # straddling and must stay visible on both lanes
                if progress >= 1.0 and abs(proj_to.lateral_error) <= COMMIT_LATERAL_TOL:
                    st = replace(st, lane=lc.to_lane, s=proj_to.s_d,
                                 lane_change=None)
                    veh.cooldown_until = t + veh.mobil.gamma
                    self.events.append({"type": "lane_change_complete",
                                        "tick": self.tick, "vehicle": veh.id,
                                        "lane": lc.to_lane})
                else:
                    st = replace(st, lane_change=replace(lc, progress=progress))
            new_states.append(st)
        for veh, st in zip(self.vehicles, new_states):
            veh.state = st

    def detect_collisions(self) -> list[CollisionEvent]:
        """Oriented-rectangle overlap between all vehicle pairs."""
        n = len(self.vehicles)
        if n < 2:
            return []
        xs = np.array([v.state.x for v in self.vehicles])
        ys = np.array([v.state.y for v in self.vehicles])
        diag = math.hypot(self.limits.body_length, self.limits.body_width)
        found = []
        for i in range(n):
            dx = xs[i + 1:] - xs[i]
            dy = ys[i + 1:] - ys[i]
            close = np.nonzero(dx * dx + dy * dy <= diag * diag)[0]
            for off in close:
                j = i + 1 + int(off)
                if _rectangles_overlap(self.vehicles[i].state,
                                       self.vehicles[j].state, self.limits):
                    found.append(CollisionEvent(self.tick, i, j))
        return found

    def step(self) -> None:
        dt = self.config.dt
        t = self.tick * dt
        while self._pending_events and self._pending_events[0].time <= t + 1e-12:
            ev = self._pending_events.pop(0)
            veh = self.vehicles[ev.vehicle]
            if ev.type == "stop":
                veh.stopped = True
            elif ev.type == "resume":
                veh.stopped = False
            else:
                raise ValueError(f"unknown event type {ev.type!r}")
            self.events.append({"type": ev.type, "tick": self.tick,
                                "vehicle": ev.vehicle})
        self._apply_commands()
        self._sense(dt)
        if self.tick % self.config.planner_divider == 0:
            self._plan(dt * self.config.planner_divider)
        self._control(dt)
        self._integrate(dt)
        new_cols = self.detect_collisions()
        self.collisions.extend(new_cols)
        for c in new_cols:
            self.events.append({"type": "collision", "tick": c.tick,
                                "a": c.a, "b": c.b})
        self.tick += 1


def _rectangles_overlap(a: VehicleState, b: VehicleState,
                        limits: VehicleLimits) -> bool:
    """Separating-axis test on two oriented body rectangles.

    Touching at a boundary does not count as overlap."""
    hl = limits.body_length / 2.0
    hw = limits.body_width / 2.0
    dx = b.x - a.x
    dy = b.y - a.y
    ca, sa = math.cos(a.theta), math.sin(a.theta)
    cb, sb = math.cos(b.theta), math.sin(b.theta)
    axes = ((ca, sa), (-sa, ca), (cb, sb), (-sb, cb))
    for ax, ay in axes:
        dist = abs(dx * ax + dy * ay)
        ra = hl * abs(ca * ax + sa * ay) + hw * abs(-sa * ax + ca * ay)
        rb = hl * abs(cb * ax + sb * ay) + hw * abs(-sb * ax + cb * ay)
        if dist >= ra + rb:
            return False
    return True


def run_scenario(config: ScenarioConfig,
                 command_log: Optional[list[dict]] = None) -> RunRecord:
    """Run a full scenario and return its record.

    command_log replays gamified commands: each entry carries the tick at
    which it was originally applied."""
    world = World(config)
    n_ticks = int(round(config.duration / config.dt))
    rec_div = config.record_divider
    n_samples = n_ticks // rec_div + 1
    n = len(world.vehicles)
    times = np.zeros(n_samples)
    arrays = {name: np.zeros((n_samples, n))
              for name in ("lane", "s", "x", "y", "theta", "v", "psi",
                           "lc_progress", "accel_cmd")}
    replay = sorted(command_log or [], key=lambda c: c["tick"])
    ri = 0
    sample = 0

    def record(idx: int, t: float) -> None:
        times[idx] = t
        for k, veh in enumerate(world.vehicles):
            st = veh.state
            arrays["lane"][idx, k] = st.lane
            arrays["s"][idx, k] = st.s
            arrays["x"][idx, k] = st.x
            arrays["y"][idx, k] = st.y
            arrays["theta"][idx, k] = st.theta
            arrays["v"][idx, k] = st.v
            arrays["psi"][idx, k] = st.psi
            arrays["lc_progress"][idx, k] = (
                st.lane_change.progress if st.lane_change else 0.0
            )
            arrays["accel_cmd"][idx, k] = veh.accel_cmd

    record(0, 0.0)
    halted = False
    for tick in range(n_ticks):
        while ri < len(replay) and replay[ri]["tick"] <= tick:
            cmd = {k: v for k, v in replay[ri].items() if k != "tick"}
            world.queue_command(cmd)
            ri += 1
        world.step()
        if (tick + 1) % rec_div == 0:
            sample += 1
            record(sample, (tick + 1) * config.dt)
        if config.halt_on_collision and world.collisions:
            halted = True
            break
    if halted:
        sample += 1
        record(sample, world.tick * config.dt)
        times = times[: sample + 1]
        arrays = {k: v[: sample + 1] for k, v in arrays.items()}
    return RunRecord(
        config=config.to_dict(),
        times=times,
        events=world.events,
        collisions=world.collisions,
        lane_lengths=tuple(l.length for l in world.track.lanes),
        command_log=world.command_log,
        **arrays,
    )


# -- metrics -----------------------------------------------------------


def crossing_times(record: RunRecord, checkpoint_s: float = 0.0) -> list[float]:
    """Times at which any vehicle crosses the checkpoint on its lane."""
    out = []
    s = record.s
    lane = record.lane
    for k in range(record.n_vehicles):
        lengths = np.array([record.lane_lengths[int(l)] for l in lane[:, k]])
        rel = (s[:, k] - checkpoint_s) % lengths
        ds = np.diff(rel)
        wraps = np.nonzero(ds < -lengths[1:] / 2.0)[0]
        for i in wraps:
            out.append(float(record.times[i + 1]))
    out.sort()
    return out


def compute_throughput(record: RunRecord, checkpoint_s: float = 0.0,
                       window: float = 30.0,
                       warmup: float = 20.0) -> ThroughputResult:
    """Checkpoint crossings per second, over sliding windows after warmup."""
    duration = record.duration
    if window > duration:
        raise ValueError("window longer than the recorded run")
    crossings = np.array(crossing_times(record, checkpoint_s))
    starts = np.arange(warmup, duration - window + 1e-9, 1.0)
    if len(starts) == 0:
        starts = np.array([max(duration - window, 0.0)])
    rates = []
    for t0 in starts:
        count = int(np.sum((crossings >= t0) & (crossings < t0 + window)))
        rates.append(count / window)
    rates = np.array(rates)
    return ThroughputResult(mean=float(rates.mean()),
                            std=float(rates.std()),
                            window=window, checkpoint_s=checkpoint_s)


def queue_stats(record: RunRecord, stopped_vehicle: Optional[int] = None
                ) -> dict:
    """Max simultaneous waiting vehicles and total waiting vehicle-seconds.

    A vehicle waits when its speed is below WAITING_SPEED and it is not
    the scripted stopped vehicle. The pre-disturbance spinup (starting
    from standstill) is excluded via the first stop event time."""
    v = record.v
    waiting = v < WAITING_SPEED
    if stopped_vehicle is None:
        stopped_vehicle = _scripted_stop_vehicle(record)
    if stopped_vehicle is not None:
        waiting = waiting.copy()
        waiting[:, stopped_vehicle] = False
    t_start = 0.0
    for ev in record.events:
        if ev["type"] == "stop":
            t_start = ev["tick"] * _record_dt(record)
            break
    mask = record.times >= t_start
    counts = waiting[mask].sum(axis=1)
    dt_sample = float(record.times[1] - record.times[0]) if len(record.times) > 1 else 0.0
    return {
        "max_queue": int(counts.max()) if len(counts) else 0,
        "waiting_vehicle_seconds": float(counts.sum() * dt_sample),
    }


def _scripted_stop_vehicle(record: RunRecord) -> Optional[int]:
    for ev in record.events:
        if ev["type"] == "stop":
            return ev.get("vehicle")
    return None


def _record_dt(record: RunRecord) -> float:
    cfg = record.config
    return cfg["dt"]


def lane_change_counts(record: RunRecord) -> dict:
    counts = {"start": 0, "complete": 0, "abandon": 0}
    for ev in record.events:
        if ev["type"] == "lane_change_start":
            counts["start"] += 1
        elif ev["type"] == "lane_change_complete":
            counts["complete"] += 1
        elif ev["type"] == "lane_change_abandon":
            counts["abandon"] += 1
    return counts


# -- export ------------------------------------------------------------

CSV_COLUMNS = ("t", "id", "lane", "s", "x", "y", "theta", "v", "psi",
               "lc_progress", "accel_cmd")


def export_record(record: RunRecord, out_dir: str | Path,
                  prefix: str = "run") -> dict[str, Path]:
    """Write the per-tick CSV and the structured summary; returns paths."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / f"{prefix}.csv"
        with open(csv_path, "w") as f:
            f.write(",".join(CSV_COLUMNS) + "\n")
            for i, t in enumerate(record.times):
                for k in range(record.n_vehicles):
                    f.write(
                        f"{t!r},{k},{int(record.lane[i, k])},"
                        f"{record.s[i, k]!r},{record.x[i, k]!r},"
                        f"{record.y[i, k]!r},{record.theta[i, k]!r},"
                        f"{record.v[i, k]!r},{record.psi[i, k]!r},"
                        f"{record.lc_progress[i, k]!r},"
                        f"{record.accel_cmd[i, k]!r}\n"
                    )
        summary = summarize(record)
        summary_path = out_dir / f"{prefix}_summary.json"
        with open(summary_path, "w") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
            f.write("\n")
        return {"csv": csv_path, "summary": summary_path}
    except OSError as exc:
        raise OSError(f"failed to export record to {out_dir}: {exc}") from exc


def summarize(record: RunRecord) -> dict:
    cfg = record.config
    tp = compute_throughput(
        record,
        window=min(cfg["throughput_window"], record.duration) or 1.0,
        warmup=cfg["warmup"],
    ) if record.duration > 0 else None
    return {
        "config": cfg,
        "throughput": {
            "mean": tp.mean, "std": tp.std, "window": tp.window,
            "checkpoint_s": tp.checkpoint_s,
        } if tp else None,
        "queue": queue_stats(record),
        "lane_changes": lane_change_counts(record),
        "collisions": [{"tick": c.tick, "a": c.a, "b": c.b}
                       for c in record.collisions],
        "n_events": len(record.events),
        "command_log": record.command_log,
    }
