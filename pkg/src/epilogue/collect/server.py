"""Collection studio server: study CRUD, live sessions over WebSocket,
replay, tagging, and export, all speaking versioned JSON documents.

One session per connection; reconnecting with the session id within the
pause window resumes a paused session. Async-mode sessions are driven by a
per-session ticker task at the study frame rate; sync sessions step only
on action messages.
"""

from __future__ import annotations

import asyncio
import base64
import json
import os
import time
import uuid

import numpy as np
from aiohttp import WSMsgType, web

from .. import model
from ..errors import EpilogueError, IllegalEventError
from .session import Event, Phase, Session
from .studies import StudyStore

PROTOCOL_VERSION = 1


def _doc(payload: dict) -> dict:
    return {"v": PROTOCOL_VERSION, **payload}


def _json_response(payload, status: int = 200) -> web.Response:
    return web.json_response(_doc(payload) if isinstance(payload, dict) else payload, status=status)


def _error_response(exc: Exception, status: int = 400) -> web.Response:
    code = exc.code if isinstance(exc, EpilogueError) else "INTERNAL"
    return _json_response({"type": "error", "code": code, "message": str(exc)}, status=status)


class CollectServer:
    def __init__(self, data_dir: str, static_dir: str | None = None, clock=None):
        self.store = StudyStore(data_dir)
        self.static_dir = static_dir
        self.clock = clock or time.monotonic
        self.sessions: dict[str, Session] = {}
        self._tickers: dict[str, asyncio.Task] = {}

    # -- app ----------------------------------------------------------------

    def make_app(self) -> web.Application:
        app = web.Application()
        app.router.add_get("/studies", self.h_list_studies)
        app.router.add_post("/studies", self.h_create_study)
        app.router.add_post("/studies/{id}/activate", self.h_activate_study)
        app.router.add_get("/studies/{id}/episodes", self.h_list_episodes)
        app.router.add_get("/episodes/{id}/steps/{j}", self.h_get_step)
        app.router.add_post("/episodes/{id}/tags", self.h_tag)
        app.router.add_post("/export", self.h_export)
        app.router.add_get("/exports/{name}", self.h_download)
        app.router.add_get("/ws", self.h_websocket)
        if self.static_dir:
            app.router.add_get("/", self._index)
            app.router.add_static("/static", self.static_dir)
        app.on_shutdown.append(self._shutdown)
        return app

    async def _index(self, request):
        return web.FileResponse(os.path.join(self.static_dir, "index.html"))

    async def _shutdown(self, app):
        for task in self._tickers.values():
            task.cancel()
        self.store.close()

    # -- study endpoints ------------------------------------------------------

    async def h_list_studies(self, request):
        return _json_response({"studies": [s.to_doc() for s in self.store.studies.values()]})

    async def h_create_study(self, request):
        try:
            doc = await request.json()
            study = self.store.create_study(doc)
        except (EpilogueError, json.JSONDecodeError, KeyError) as exc:
            return _error_response(exc)
        return _json_response({"study": study.to_doc()})

    async def h_activate_study(self, request):
        try:
            study = self.store.activate(request.match_info["id"])
        except EpilogueError as exc:
            return _error_response(exc, status=404)
        return _json_response({"study": study.to_doc()})

    async def h_list_episodes(self, request):
        try:
            episodes = self.store.list_episodes(request.match_info["id"])
        except EpilogueError as exc:
            return _error_response(exc, status=404)
        return _json_response(
            {
                "episodes": [
                    {
                        "episode_id": e.episode_id,
                        "outcome": e.outcome.value,
                        "user_id": e.user_id,
                        "num_steps": e.num_steps,
                        "rewards": e.rewards(),
                        "tags": e.episode_tags,
                        "step_tags": {str(i): t for i, t in sorted(e.step_tags.items())},
                    }
                    for e in episodes
                ]
            }
        )

    async def h_get_step(self, request):
        try:
            stored = self.store.get_episode(request.match_info["id"])
            j = int(request.match_info["j"])
            if not 0 <= j < stored.num_steps:
                return _json_response(
                    {"type": "error", "code": "INDEX_OUT_OF_RANGE", "message": "no such step"},
                    status=404,
                )
            step = stored.episode.steps[j]
        except EpilogueError as exc:
            return _error_response(exc, status=404)
        metadata = {
            k: model.value_to_doc(v)
            for k, v in step.metadata.items()
            if k != "image"
        }
        return _json_response(
            {
                "episode_id": stored.episode_id,
                "step": j,
                "num_steps": stored.num_steps,
                "is_first": step.is_first,
                "is_last": step.is_last,
                "is_terminal": step.is_terminal,
                "observation": model.value_to_doc(step.observation),
                "action": model.value_to_doc(step.action),
                "reward": float(np.asarray(step.reward)),
                "discount": float(np.asarray(step.discount)),
                "metadata": metadata,
                "image": base64.b64encode(stored.step_image(j)).decode("ascii"),
                "tags": stored.step_tags.get(j, {}),
            }
        )

    async def h_tag(self, request):
        try:
            doc = await request.json()
            self.store.tag(
                request.match_info["id"],
                scope=doc.get("scope", "step"),
                name=doc["name"],
                value=doc.get("value", True),
                step=doc.get("step"),
            )
        except (EpilogueError, json.JSONDecodeError, KeyError) as exc:
            return _error_response(exc)
        return _json_response({"ok": True})

    async def h_export(self, request):
        try:
            doc = await request.json()
            study_id = doc["study"]
            name = doc.get("name", f"{study_id}-export")
            out = os.path.join(self.store.data_dir, "exports", f"{name}.rlds")
            summary = self.store.export(
                study_id,
                out,
                outcomes=doc.get("outcomes", ["completed"]),
                episode_ids=doc.get("episode_ids"),
                strip_images=bool(doc.get("strip_images", False)),
                truncate_on_tag=doc.get("truncate_on_tag"),
            )
        except (EpilogueError, json.JSONDecodeError, KeyError) as exc:
            return _error_response(exc)
        return _json_response({**summary, "download": f"/exports/{name}.rlds"})

    async def h_download(self, request):
        path = os.path.join(self.store.data_dir, "exports", request.match_info["name"])
        if not os.path.exists(path):
            return _json_response(
                {"type": "error", "code": "UNKNOWN_EXPORT", "message": "no such export"}, status=404
            )
        return web.FileResponse(path)

    # -- websocket sessions -----------------------------------------------------

    async def h_websocket(self, request):
        ws = web.WebSocketResponse()
        await ws.prepare(request)
        session: Session | None = None
        try:
            async for message in ws:
                if message.type != WSMsgType.TEXT:
                    break
                try:
                    doc = json.loads(message.data)
                except json.JSONDecodeError:
                    await self._send_error(ws, "BAD_MESSAGE", "not a JSON document")
                    continue
                if doc.get("v", PROTOCOL_VERSION) != PROTOCOL_VERSION:
                    await self._send_error(ws, "BAD_VERSION", "unsupported protocol version")
                    continue
                session = await self._handle_message(ws, session, doc)
                if session is not None and session.phase is Phase.ENDED:
                    break
        finally:
            self._stop_ticker(session)
        return ws

    async def _handle_message(self, ws, session: Session | None, doc: dict) -> Session | None:
        kind = doc.get("type")
        if kind == "start_session":
            return await self._start_session(ws, doc)
        if session is None:
            await self._send_error(ws, "NO_SESSION", "send start_session first")
            return None
        try:
            if kind == "tag":
                episode_id = doc.get("episode") or session.last_persisted_id
                self.store.tag(
                    episode_id,
                    scope=doc.get("scope", "step"),
                    name=doc["name"],
                    value=doc.get("value", True),
                    step=doc.get("step"),
                )
                await self._send(ws, {"type": "tagged", "episode": episode_id})
                return session
            await self._dispatch_event(ws, session, kind, doc)
        except IllegalEventError as exc:
            await self._send_error(ws, exc.code, str(exc))
        except EpilogueError as exc:
            await self._send_error(ws, exc.code, str(exc))
        return session

    async def _start_session(self, ws, doc: dict) -> Session | None:
        study_id = doc.get("study")
        user_id = doc.get("user", "anonymous")
        resume_id = doc.get("session")
        if resume_id and resume_id in self.sessions:
            session = self.sessions[resume_id]
            session.poll_timeout()
            if session.phase is not Phase.ENDED:
                await self._send_state(ws, session)
                return session
            await self._send_error(ws, "SESSION_EXPIRED", "session already ended")
            return None
        try:
            session_id = uuid.uuid4().hex[:12]
            session = self.store.open_session(study_id, user_id, session_id, clock=self.clock)
        except EpilogueError as exc:
            await self._send_error(ws, exc.code, str(exc))
            return None
        self.sessions[session_id] = session
        await self._send_state(ws, session)
        return session

    async def _dispatch_event(self, ws, session: Session, kind: str, doc: dict) -> None:
        events = {
            "select_env": (Event.SELECT_ENV, doc.get("index", 0)),
            "start_episode": (Event.START_EPISODE, None),
            "action": (Event.ACTION, doc.get("value")),
            "pause": (Event.PAUSE, None),
            "unpause": (Event.UNPAUSE, None),
            "cancel": (Event.CANCEL, None),
            "save": (Event.SAVE, doc.get("confirm", False)),
            "end_session": (Event.END_SESSION, None),
        }
        if kind not in events:
            await self._send_error(ws, "BAD_MESSAGE", f"unknown message type {kind!r}")
            return
        event, value = events[kind]

        if event is Event.UNPAUSE and session.poll_timeout():
            await self._send_state(ws, session)
            return
        was_running_steps = session.episode_steps
        phase_before = session.phase
        session.transition(event, value)

        if event is Event.START_EPISODE:
            await self._send_state(ws, session)
            await self._send_frame(ws, session)
            self._start_ticker(ws, session)
            return
        if event is Event.ACTION:
            if session.mode == "sync" and session.episode_steps > was_running_steps:
                await self._send_frame(ws, session)
                if session.phase is Phase.AWAITING_SAVE:
                    await self._send(
                        ws, {"type": "episode_end", "steps": session.episode_steps + 1}
                    )
                    await self._send_state(ws, session)
            return
        if session.phase is not phase_before:
            await self._send_state(ws, session)

    # -- async mode ticker ------------------------------------------------------

    def _start_ticker(self, ws, session: Session) -> None:
        if session.mode != "async":
            return
        self._stop_ticker(session)
        self._tickers[session.session_id] = asyncio.get_running_loop().create_task(
            self._tick_loop(ws, session)
        )

    def _stop_ticker(self, session: Session | None) -> None:
        if session and session.session_id in self._tickers:
            self._tickers.pop(session.session_id).cancel()

    async def _tick_loop(self, ws, session: Session) -> None:
        interval = 1.0 / session.frame_rate_hz
        try:
            while session.phase in (Phase.RUNNING, Phase.PAUSED):
                await asyncio.sleep(interval)
                session.poll_timeout()
                for frame in session.tick():
                    await self._send(
                        ws,
                        {
                            "type": "frame",
                            "step": frame.step,
                            "image": base64.b64encode(frame.image).decode("ascii"),
                            "reward": frame.reward,
                        },
                    )
                if session.phase is Phase.AWAITING_SAVE:
                    await self._send(ws, {"type": "episode_end", "steps": session.episode_steps + 1})
                    await self._send_state(ws, session)
        except (asyncio.CancelledError, ConnectionResetError):
            pass

    # -- outbound messages --------------------------------------------------------

    async def _send(self, ws, payload: dict) -> None:
        await ws.send_str(json.dumps(_doc(payload)))

    async def _send_error(self, ws, code: str, message: str) -> None:
        await self._send(ws, {"type": "error", "code": code, "message": message})

    async def _send_state(self, ws, session: Session) -> None:
        study = session.study
        entry = study.environments[session.env_index]
        await self._send(
            ws,
            {
                "type": "state",
                "phase": session.phase.value,
                "session": session.session_id,
                "study": study.id,
                "env_index": session.env_index,
                "input_map": entry.get("input_map", {}),
                "mode": study.mode,
                "instructions": study.instructions,
                "last_outcome": session.last_outcome.value if session.last_outcome else None,
                "last_episode_id": session.last_persisted_id,
            },
        )

    async def _send_frame(self, ws, session: Session) -> None:
        frame = session.last_frame
        if frame is None:
            return
        await self._send(
            ws,
            {
                "type": "frame",
                "step": frame.step,
                "image": base64.b64encode(frame.image).decode("ascii"),
                "reward": frame.reward,
            },
        )


def serve(host: str, port: int, data_dir: str, static_dir: str | None = None) -> None:
    server = CollectServer(data_dir, static_dir)
    web.run_app(server.make_app(), host=host, port=port)
