"""Real-time gateway for the gamified mode.

Paces the simulation to wall clock, streams world frames to connected
clients over a websocket, and injects commands into the played vehicle.
Message schema (versioned): {"type": hello|frame|command|event,
"version": 1, "payload": {...}} with SI units and finite decimal numbers.
"""

from __future__ import annotations

import asyncio
import json
import time
from dataclasses import dataclass, field
from typing import Optional

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .config import ScenarioConfig
from .engine import World
from .track import sample_polyline

PROTOCOL_VERSION = 1


def make_frame(world: World) -> dict:
    vehicles = []
    for veh in world.vehicles:
        st = veh.state
        vehicles.append({
            "id": veh.id,
            "x": st.x, "y": st.y, "theta": st.theta,
            "v": st.v, "psi": st.psi,
            "lane": st.lane,
            "lane_change_progress": (
                st.lane_change.progress if st.lane_change else 0.0
            ),
            "is_played": veh.game is not None,
            "mode": veh.game.mode if veh.game else None,
        })
    return {
        "tick": world.tick,
        "time": world.tick * world.config.dt,
        "vehicles": vehicles,
    }


def track_payload(world: World, resolution: float = 0.05) -> dict:
    rows = sample_polyline(world.track, resolution)
    return {
        "lane_spacing": world.track.lane_spacing,
        "lane_lengths": [l.length for l in world.track.lanes],
        "lane_width": world.track.lanes[0].width,
        "polyline": [
            {"lane": lane, "s": s, "x": x, "y": y, "theta": th, "kappa": k}
            for lane, s, x, y, th, k in rows
        ],
    }


@dataclass
class GatewaySession:
    """One world owned by a session loop; clients talk through queues."""

    world: World
    frame_rate: float = 30.0
    clients: dict[int, "ClientSlot"] = field(default_factory=dict)
    _next_client: int = 0
    controller_of: dict[int, int] = field(default_factory=dict)  # vehicle -> client
    recent_events: list[dict] = field(default_factory=list)
    _events_seen: int = 0

    def register(self) -> "ClientSlot":
        slot = ClientSlot(id=self._next_client)
        self._next_client += 1
        self.clients[slot.id] = slot
        return slot

    def unregister(self, slot: "ClientSlot") -> None:
        self.clients.pop(slot.id, None)
        for vid, cid in list(self.controller_of.items()):
            if cid == slot.id:
                del self.controller_of[vid]
                # played vehicle falls back to automatic within one tick
                self.world.queue_command(
                    {"vehicle_id": vid, "kind": "mode", "mode": "automatic"}
                )

    def claim(self, slot: "ClientSlot", vehicle_id: int) -> bool:
        holder = self.controller_of.get(vehicle_id)
        if holder is not None and holder != slot.id:
            return False
        self.controller_of[vehicle_id] = slot.id
        return True

    def handle_command(self, slot: "ClientSlot", payload: dict) -> Optional[dict]:
        vid = payload.get("vehicle_id")
        if isinstance(vid, int) and not self.claim(slot, vid):
            return {"type": "event", "version": PROTOCOL_VERSION,
                    "payload": {"type": "error",
                                "reason": f"vehicle {vid} already controlled"}}
        err = self.world.queue_command(payload)
        if err is not None:
            return {"type": "event", "version": PROTOCOL_VERSION, "payload": err}
        return None

    def step_to_wallclock(self, sim_ahead: float) -> None:
        """Advance the world so simulated time tracks wall clock."""
        dt = self.world.config.dt
        ticks = int(sim_ahead / dt)
        for _ in range(ticks):
            self.world.step()
        new_events = self.world.events[self._events_seen:]
        self._events_seen = len(self.world.events)
        self.recent_events = new_events

    async def run(self, stop: asyncio.Event) -> None:
        dt = self.world.config.dt
        frame_interval = 1.0 / self.frame_rate
        start_wall = time.monotonic()
        start_sim = self.world.tick * dt
        next_frame = start_wall
        while not stop.is_set():
            now = time.monotonic()
            target_sim = start_sim + (now - start_wall)
            behind = target_sim - self.world.tick * dt
            if behind > 0.0:
                self.step_to_wallclock(behind)
            if now >= next_frame:
                frame = make_frame(self.world)
                frame["events"] = self.recent_events
                self.recent_events = []
                msg = json.dumps({"type": "frame",
                                  "version": PROTOCOL_VERSION,
                                  "payload": frame})
                for slot in list(self.clients.values()):
                    slot.push(msg)
                next_frame += frame_interval
            await asyncio.sleep(min(frame_interval / 4.0, 0.005))


@dataclass
class ClientSlot:
    id: int
    outbox: asyncio.Queue = field(default_factory=lambda: asyncio.Queue(maxsize=64))

    def push(self, msg: str) -> None:
        try:
            self.outbox.put_nowait(msg)
        except asyncio.QueueFull:
            # drop oldest; a live stream prefers freshness over completeness
            try:
                self.outbox.get_nowait()
            except asyncio.QueueEmpty:
                pass
            self.outbox.put_nowait(msg)


def create_app(config: ScenarioConfig, frame_rate: float = 30.0,
               paced: bool = True) -> FastAPI:
    config.validate()
    world = World(config)
    session = GatewaySession(world=world, frame_rate=frame_rate)
    app = FastAPI()
    app.state.session = session
    stop = asyncio.Event()

    @app.on_event("startup")
    async def _start():
        if paced:
            app.state.loop_task = asyncio.create_task(session.run(stop))

    @app.on_event("shutdown")
    async def _stop():
        stop.set()
        task = getattr(app.state, "loop_task", None)
        if task is not None:
            task.cancel()

    @app.get("/track")
    def get_track():
        return track_payload(world)

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        slot = session.register()
        hello = {
            "type": "hello",
            "version": PROTOCOL_VERSION,
            "payload": {
                "track": track_payload(world),
                "played_vehicles": [v.id for v in world.vehicles
                                    if v.game is not None],
                "frame_rate": frame_rate,
            },
        }
        await ws.send_text(json.dumps(hello))

        async def pump_out():
            while True:
                msg = await slot.outbox.get()
                await ws.send_text(msg)

        out_task = asyncio.create_task(pump_out())
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    slot.push(json.dumps({
                        "type": "event", "version": PROTOCOL_VERSION,
                        "payload": {"type": "warning",
                                    "reason": "unparseable message"}}))
                    continue
                mtype = msg.get("type")
                if mtype == "command":
                    reply = session.handle_command(slot, msg.get("payload", {}))
                    if reply is not None:
                        slot.push(json.dumps(reply))
                elif mtype == "hello":
                    pass
                else:
                    # unknown message types are ignored with a warning
                    slot.push(json.dumps({
                        "type": "event", "version": PROTOCOL_VERSION,
                        "payload": {"type": "warning",
                                    "reason": f"unknown message type {mtype!r}"}}))
        except WebSocketDisconnect:
            pass
        finally:
            out_task.cancel()
            session.unregister(slot)

    return app


def serve(config: ScenarioConfig, host: str = "127.0.0.1", port: int = 8700,
          frame_rate: float = 30.0) -> None:
    import uvicorn

    app = create_app(config, frame_rate=frame_rate)
    uvicorn.run(app, host=host, port=port, log_level="warning")
