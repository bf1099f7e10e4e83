"""Scenario configuration: schema, YAML loading, and dotted-key overrides.

All units are SI; keys carrying degrees must use a `_deg` suffix and are
converted on load.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .track import TrackSpec


class ConfigError(ValueError):
    """Invalid or inconsistent scenario configuration."""


@dataclass(frozen=True)
class SensingConfig:
    mode: str = "estimated"  # "oracle" bypasses the estimator
    sigma_xy: float = 0.001
    sigma_theta: float = 0.002


@dataclass(frozen=True)
class Event:
    time: float
    type: str  # "stop" | "resume"
    vehicle: int


@dataclass(frozen=True)
class VehiclesConfig:
    count: int = 16
    placement: str = "even"
    policy: str = "egocentric"  # egocentric | cooperative | gamified
    preset: str = "normal"  # normal | aggressive
    gamified_ids: tuple[int, ...] = ()


@dataclass(frozen=True)
class CoopConfig:
    visibility_range: float = 2.0
    urgency_gain: float = 0.5  # defaults to 1/visibility_range
    gamma: float = 2.0


@dataclass(frozen=True)
class LimitsConfig:
    wheelbase: float = 0.122
    max_steer_deg: float = 18.0
    max_steer_rate: float = 1.5
    max_speed: float = 1.5
    max_accel: float = 1.0
    max_decel: float = 2.0
    body_length: float = 0.197
    body_width: float = 0.081


@dataclass(frozen=True)
class ScenarioConfig:
    track: TrackSpec = field(default_factory=TrackSpec)
    vehicles: VehiclesConfig = field(default_factory=VehiclesConfig)
    coop: CoopConfig = field(default_factory=CoopConfig)
    limits: LimitsConfig = field(default_factory=LimitsConfig)
    sensing: SensingConfig = field(default_factory=SensingConfig)
    events: tuple[Event, ...] = ()
    duration: float = 200.0
    dt: float = 0.01
    seed: int = 1
    planner_divider: int = 5
    record_divider: int = 5
    warmup: float = 20.0
    throughput_window: float = 30.0
    halt_on_collision: bool = False
    idm_overrides: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.dt <= 0.0:
            raise ConfigError("dt must be positive")
        if self.duration < 0.0:
            raise ConfigError("duration must be non-negative")
        if self.vehicles.count < 1:
            raise ConfigError("vehicles.count must be >= 1")
        if self.vehicles.policy not in ("egocentric", "cooperative", "gamified"):
            raise ConfigError(f"unknown policy {self.vehicles.policy!r}")
        if self.vehicles.preset not in ("normal", "aggressive"):
            raise ConfigError(f"unknown preset {self.vehicles.preset!r}")
        if self.sensing.mode not in ("oracle", "estimated"):
            raise ConfigError(f"unknown sensing mode {self.sensing.mode!r}")
        times = [e.time for e in self.events]
        if times != sorted(times):
            raise ConfigError("events must be sorted by time")
        for e in self.events:
            if not 0 <= e.vehicle < self.vehicles.count:
                raise ConfigError(f"event references unknown vehicle {e.vehicle}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["events"] = [asdict(e) for e in self.events]
        return d


def config_from_dict(raw: dict) -> ScenarioConfig:
    raw = copy.deepcopy(raw)
    try:
        track = raw.pop("track", {})
        tspec = TrackSpec(
            n_lanes=int(track.get("n_lanes", 2)),
            lane_lengths=tuple(track.get("lane_lengths", (16.0, 17.0))),
            lane_spacing=float(track.get("lane_spacing", 1.0 / (2.0 * math.pi))),
            end_radius=float(track.get("end_radius", 0.8)),
            lane_width=float(track.get("lane_width", 0.25)),
        )
        veh = raw.pop("vehicles", {})
        vcfg = VehiclesConfig(
            count=int(veh.get("count", 16)),
            placement=str(veh.get("placement", "even")),
            policy=str(veh.get("policy", "egocentric")),
            preset=str(veh.get("preset", "normal")),
            gamified_ids=tuple(veh.get("gamified_ids", ())),
        )
        coop = raw.pop("coop", {})
        crange = float(coop.get("visibility_range", 2.0))
        ccfg = CoopConfig(
            visibility_range=crange,
            urgency_gain=float(coop.get("urgency_gain", 1.0 / crange)),
            gamma=float(coop.get("gamma", 2.0)),
        )
        lim = raw.pop("limits", {})
        lcfg = LimitsConfig(
            wheelbase=float(lim.get("wheelbase", 0.122)),
            max_steer_deg=float(lim.get("max_steer_deg", 18.0)),
            max_steer_rate=float(lim.get("max_steer_rate", 1.5)),
            max_speed=float(lim.get("max_speed", 1.5)),
            max_accel=float(lim.get("max_accel", 1.0)),
            max_decel=float(lim.get("max_decel", 2.0)),
            body_length=float(lim.get("body_length", 0.197)),
            body_width=float(lim.get("body_width", 0.081)),
        )
        sen = raw.pop("sensing", {})
        scfg = SensingConfig(
            mode=str(sen.get("mode", "estimated")),
            sigma_xy=float(sen.get("sigma_xy", 0.001)),
            sigma_theta=float(sen.get("sigma_theta", 0.002)),
        )
        events = tuple(
            Event(time=float(e["time"]), type=str(e["type"]),
                  vehicle=int(e["vehicle"]))
            for e in raw.pop("events", [])
        )
        cfg = ScenarioConfig(
            track=tspec,
            vehicles=vcfg,
            coop=ccfg,
            limits=lcfg,
            sensing=scfg,
            events=events,
            duration=float(raw.pop("duration", 200.0)),
            dt=float(raw.pop("dt", 0.01)),
            seed=int(raw.pop("seed", 1)),
            planner_divider=int(raw.pop("planner_divider", 5)),
            record_divider=int(raw.pop("record_divider", 5)),
            warmup=float(raw.pop("warmup", 20.0)),
            throughput_window=float(raw.pop("throughput_window", 30.0)),
            halt_on_collision=bool(raw.pop("halt_on_collision", False)),
            idm_overrides=dict(raw.pop("idm", {})),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if raw:
        raise ConfigError(f"unknown config keys: {sorted(raw)}")
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config not found: {path}")
    with open(path) as f:
        raw = yaml.safe_load(f) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping: {path}")
    return config_from_dict(raw)


def apply_overrides(cfg: ScenarioConfig, overrides: list[str]) -> ScenarioConfig:
    """Apply `dotted.key=value` overrides on top of a config."""
    raw = _renest(cfg.to_dict())
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value: {item!r}")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node: Any = raw
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node:
                raise ConfigError(f"unknown override key: {key!r}")
            node = node[p]
        leaf = parts[-1]
        if not isinstance(node, dict) or (leaf not in node and parts[0] != "idm"):
            raise ConfigError(f"unknown override key: {key!r}")
        node[leaf] = yaml.safe_load(value)
    return config_from_dict(raw)


def _renest(raw: dict) -> dict:
    # to_dict flattens dataclasses into plain dicts already; map field
    # names back to the loader's schema
    out = copy.deepcopy(raw)
    if "idm_overrides" in out:
        out["idm"] = out.pop("idm_overrides")
    if "track" in out:
        t = out["track"]
        t.setdefault("n_lanes", t.pop("n_lanes", 2))
    return out
