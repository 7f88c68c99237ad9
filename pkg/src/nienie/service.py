"""Websocket service exposing live sessions over a small JSON frame protocol.

Every frame, both directions, is one JSON object:

    {"type": ..., "session_id": ..., "seq": ..., "t_ms": ..., "payload": {...}}

Client frames: hello (first, may carry config overrides), squeeze, bye.
Server frames: state, beat, stress, guidance, adherence, bye, error.

The server owns the clock. Session time advances at `time_scale` times wall
time so tests can run a three-minute session in a couple of seconds. The
client only ever sees server-derived state; squeezes are the one input.
"""

from __future__ import annotations

import asyncio
import time
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.staticfiles import StaticFiles

from . import guidance as gd
from .lstm import ModelBundle
from .session import (PHASE_ACTIVE, PHASE_COOLDOWN, PHASE_ENDED,
                      PhysioParams, SessionConfig, SessionEngine,
                      SimulatedPhysio, substream_rng, summarize)

SQUEEZE_MIN_SPACING_MS = 30     # session-time spacing; ~30 Hz ceiling
ADHERENT_WINDOW_MS = 5000

_RECORD_FRAME = {"estimate": "stress", "cue": "beat", "guidance": "guidance",
                 "adherence": "adherence"}


@dataclass
class ServiceSettings:
    time_scale: float = 1.0
    max_sessions: int = 8
    tick_s: float = 0.05
    config: SessionConfig = field(default_factory=SessionConfig)
    remote_cfg: gd.RemoteConfig | None = None


class LiveSession:
    """One websocket connection: engine plus server-side physiology whose
    elevation responds to the client's squeezes."""

    def __init__(self, sid: str, bundle: ModelBundle, cfg: SessionConfig,
                 settings: ServiceSettings):
        self.sid = sid
        self.settings = settings
        self.engine = SessionEngine(bundle, cfg, remote_cfg=settings.remote_cfg)
        self.physio = SimulatedPhysio(PhysioParams(),
                                      substream_rng(cfg.seed, "physio"))
        self.start_wall = time.monotonic()
        self.server_seq = 0
        self.client_seq = 0
        self.next_sample_ms = 1000
        self.last_accept_ms = -10 ** 9
        self.last_high_squeeze_ms: int | None = None
        self.dropped_rate = 0
        self.rejected_order = 0
        self.summary: dict | None = None

    def now_ms(self) -> int:
        return int((time.monotonic() - self.start_wall) * 1000
                   * self.settings.time_scale)

    def adherent(self, t_ms: int) -> bool:
        return (self.last_high_squeeze_ms is not None
                and t_ms - self.last_high_squeeze_ms <= ADHERENT_WINDOW_MS)

    async def frame(self, ws: WebSocket, type_: str, t_ms: int, payload: dict):
        self.server_seq += 1
        await ws.send_json({"type": type_, "session_id": self.sid,
                            "seq": self.server_seq, "t_ms": int(t_ms),
                            "payload": payload})

    async def flush(self, ws: WebSocket):
        for rec in self.engine.drain():
            kind = rec["type"]
            if kind in _RECORD_FRAME:
                await self.frame(ws, _RECORD_FRAME[kind], rec["t_ms"],
                                 rec["payload"])
            elif kind == "phase":
                payload = dict(rec["payload"])
                if payload["phase"] == PHASE_ENDED:
                    payload["dropped_squeezes"] = self.dropped_rate
                await self.frame(ws, "state", rec["t_ms"], payload)
            elif kind == "plan":
                await self.frame(ws, "state", rec["t_ms"],
                                 {"phase": self.engine.phase,
                                  "plan": rec["payload"]})
            elif kind == "summary":
                self.summary = rec["payload"]
                await self.frame(ws, "state", rec["t_ms"],
                                 {"phase": PHASE_ENDED,
                                  "summary": rec["payload"]})
            elif kind == "guidance_request":
                asyncio.ensure_future(self._guidance(ws, rec["payload"]))

    async def _guidance(self, ws: WebSocket, payload: dict):
        ctx = gd.GuidanceContext(**payload["ctx"])
        seed = payload["fallback_seed"]
        if self.settings.remote_cfg is not None:
            msg = await asyncio.to_thread(gd.generate_remote, ctx,
                                          self.settings.remote_cfg, seed)
        else:
            msg = gd.render_template(gd.select_tone(ctx), ctx, seed=seed)
        if self.engine.phase != PHASE_ENDED:
            self.engine.deliver_guidance(self.now_ms(), msg)
            await self.flush(ws)

    async def tick(self, ws: WebSocket):
        """Feed due physiological samples, then advance internal events."""
        now = self.now_ms()
        end = self.engine.config.end_ms
        while self.next_sample_ms <= min(now, end):
            t = self.next_sample_ms
            exercising = self.engine.phase in (PHASE_ACTIVE, PHASE_COOLDOWN)
            x = self.physio.step(self.adherent(t), exercising)
            self.engine.on_sample(t, x)
            self.next_sample_ms += 1000
        if now > end:
            self.engine.finish()
        else:
            self.engine.advance_to(now)
        await self.flush(ws)

    def on_squeeze(self, t_ms: int, payload: dict) -> None:
        intensity = float(payload.get("intensity", 0.0))
        if t_ms - self.last_accept_ms < SQUEEZE_MIN_SPACING_MS:
            self.dropped_rate += 1
            return
        self.last_accept_ms = t_ms
        sample_t = payload.get("t_ms")
        accepted = self.engine.on_squeeze(
            t_ms, intensity, sample_t_ms=int(sample_t) if sample_t is not None else None)
        if accepted and intensity >= 0.5:
            self.last_high_squeeze_ms = t_ms


class Registry:
    def __init__(self):
        self.active: dict[str, LiveSession] = {}
        self.summaries: dict[str, dict] = {}

    def close(self, session: LiveSession):
        self.active.pop(session.sid, None)
        if session.summary is None and session.engine.log.records:
            session.summary = summarize(session.engine.log.records,
                                        end_ms=session.engine.now)
        self.summaries[session.sid] = session.summary or {}


def create_app(bundle: ModelBundle, settings: ServiceSettings | None = None,
               static_dir=None) -> FastAPI:
    settings = settings or ServiceSettings()
    app = FastAPI(title="nienie")
    registry = Registry()
    app.state.registry = registry
    app.state.settings = settings

    @app.get("/health")
    async def health():
        return {"status": "ok", "sessions": len(registry.active)}

    @app.get("/sessions/{sid}/summary")
    async def session_summary(sid: str):
        if sid in registry.summaries:
            return {"session_id": sid, "ended": True,
                    "summary": registry.summaries[sid]}
        if sid in registry.active:
            sess = registry.active[sid]
            return {"session_id": sid, "ended": False,
                    "summary": summarize(sess.engine.log.records,
                                         end_ms=sess.engine.now)}
        return {"session_id": sid, "ended": None, "summary": None}

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        try:
            first = await ws.receive_json()
        except (WebSocketDisconnect, ValueError):
            return
        if first.get("type") != "hello":
            await ws.send_json({"type": "error", "session_id": None, "seq": 1,
                                "t_ms": 0, "payload": {"code": "expected_hello"}})
            await ws.close()
            return
        if len(registry.active) >= settings.max_sessions:
            await ws.send_json({"type": "error", "session_id": None, "seq": 1,
                                "t_ms": 0, "payload": {"code": "max_sessions"}})
            await ws.close()
            return

        overrides = (first.get("payload") or {}).get("config") or {}
        try:
            cfg = SessionConfig.from_dict({**settings.config.to_dict(),
                                           **overrides})
        except Exception as exc:
            await ws.send_json({"type": "error", "session_id": None, "seq": 1,
                                "t_ms": 0,
                                "payload": {"code": "bad_config",
                                            "detail": str(exc)}})
            await ws.close()
            return

        sid = uuid.uuid4().hex[:12]
        session = LiveSession(sid, app.state.bundle, cfg, settings)
        registry.active[sid] = session
        session.client_seq = int(first.get("seq", 0))
        try:
            await session.flush(ws)   # initial state: calibrating
            await _run_session_socket(ws, session)
        except WebSocketDisconnect:
            if session.engine.phase != PHASE_ENDED:
                session.engine.abort(session.now_ms())
                session.engine.drain()
        finally:
            registry.close(session)

    app.state.bundle = bundle
    if static_dir is not None:
        app.mount("/", StaticFiles(directory=static_dir, html=True),
                  name="frontend")
    return app


async def _run_session_socket(ws: WebSocket, session: LiveSession):
    settings = session.settings
    recv_task = None
    try:
        while True:
            if recv_task is None:
                recv_task = asyncio.ensure_future(ws.receive_json())
            done, _ = await asyncio.wait({recv_task}, timeout=settings.tick_s)
            if done:
                msg = recv_task.result()   # raises on disconnect
                recv_task = None
                if not isinstance(msg, dict):
                    continue
                now = session.now_ms()
                seq = int(msg.get("seq", 0))
                if seq <= session.client_seq:
                    session.rejected_order += 1
                    await session.frame(ws, "error", now,
                                        {"code": "out_of_order",
                                         "detail": f"seq {seq} after "
                                                   f"{session.client_seq}"})
                    continue
                session.client_seq = seq
                if msg.get("type") == "squeeze":
                    session.on_squeeze(now, msg.get("payload") or {})
                elif msg.get("type") == "bye":
                    if session.engine.phase != PHASE_ENDED:
                        session.engine.abort(now)
                    await session.flush(ws)
                    await session.frame(ws, "bye", now, {})
                    break
            await session.tick(ws)
            if session.engine.phase == PHASE_ENDED:
                await session.frame(ws, "bye", session.engine.now, {})
                break
    finally:
        if recv_task is not None:
            recv_task.cancel()
    try:
        await ws.close()
    except RuntimeError:
        pass
