import asyncio
import base64
import json

import pytest
from aiohttp.test_utils import TestClient, TestServer

from epilogue import store
from epilogue.collect.server import CollectServer
from epilogue.collect.studies import StudyStore
from epilogue.errors import NoMatchingEpisodesError


def run(coro):
    return asyncio.run(coro)


STUDY_DOC = {
    "name": "grid study",
    "instructions": "pick up the can, drop it on the bin",
    "environments": [{"env": "gridpickplace", "config": {"time_limit": 30, "seed": 3}}],
    "mode": "sync",
}


async def make_client(tmp_path):
    server = CollectServer(str(tmp_path / "data"))
    client = TestClient(TestServer(server.make_app()))
    await client.start_server()
    return server, client


async def create_active_study(client):
    response = await client.post("/studies", json=STUDY_DOC)
    assert response.status == 200
    study = (await response.json())["study"]
    response = await client.post(f"/studies/{study['id']}/activate")
    assert response.status == 200
    return study


class WsDriver:
    """Scripted protocol client used by the headless tests."""

    def __init__(self, ws):
        self.ws = ws

    async def send(self, doc):
        await self.ws.send_str(json.dumps({"v": 1, **doc}))

    async def recv(self, expected_type=None):
        msg = json.loads((await self.ws.receive()).data)
        assert msg["v"] == 1
        if expected_type is not None:
            assert msg["type"] == expected_type, msg
        return msg


async def run_episode_to_end(driver, max_actions=64):
    """Step with planner-ish noop actions until the episode ends."""
    steps = 0
    for _ in range(max_actions):
        await driver.send({"type": "action", "value": 0})
        msg = await driver.recv()
        assert msg["type"] == "frame"
        steps += 1
        if msg.get("last"):
            break
        # episode_end arrives when the env hits LAST
        if steps >= 30:
            end = await driver.recv("episode_end")
            state = await driver.recv("state")
            return steps, state
    raise AssertionError("episode never ended")


class TestStudies:
    def test_create_activate_list(self, tmp_path):
        async def scenario():
            server, client = await make_client(tmp_path)
            try:
                study = await create_active_study(client)
                response = await client.get("/studies")
                doc = await response.json()
                assert doc["v"] == 1
                assert [s["id"] for s in doc["studies"]] == [study["id"]]
                assert doc["studies"][0]["state"] == "active"
            finally:
                await client.close()

        run(scenario())

    def test_invalid_study_rejected(self, tmp_path):
        async def scenario():
            server, client = await make_client(tmp_path)
            try:
                response = await client.post(
                    "/studies", json={"name": "bad", "environments": [], "mode": "sync"}
                )
                assert response.status == 400
                doc = await response.json()
                assert doc["code"] == "INVALID_ARGUMENT"
            finally:
                await client.close()

        run(scenario())

    def test_session_on_draft_study_fails(self, tmp_path):
        async def scenario():
            server, client = await make_client(tmp_path)
            try:
                response = await client.post("/studies", json=STUDY_DOC)
                study = (await response.json())["study"]
                async with client.ws_connect("/ws") as ws:
                    driver = WsDriver(ws)
                    await driver.send(
                        {"type": "start_session", "study": study["id"], "user": "u1"}
                    )
                    msg = await driver.recv("error")
                    assert msg["code"] == "INVALID_ARGUMENT"
            finally:
                await client.close()

        run(scenario())


class TestLiveSession:
    def test_sync_actions_step_and_save(self, tmp_path):
        async def scenario():
            server, client = await make_client(tmp_path)
            try:
                study = await create_active_study(client)
                async with client.ws_connect("/ws") as ws:
                    driver = WsDriver(ws)
                    await driver.send({"type": "start_session", "study": study["id"], "user": "u1"})
                    state = await driver.recv("state")
                    assert state["phase"] == "idle"
                    assert state["input_map"]["ArrowUp"] == 0

                    await driver.send({"type": "start_episode"})
                    state = await driver.recv("state")
                    assert state["phase"] == "running"
                    frame = await driver.recv("frame")
                    assert frame["step"] == 0
                    image = base64.b64decode(frame["image"])
                    assert image[:8] == b"\x89PNG\r\n\x1a\n"

                    # 20 sync actions -> exactly 20 environment steps
                    for i in range(20):
                        await driver.send({"type": "action", "value": 0})
                        frame = await driver.recv("frame")
                        assert frame["step"] == i + 1

                    # run to the time limit (30), collect episode_end
                    for i in range(20, 30):
                        await driver.send({"type": "action", "value": 0})
                        frame = await driver.recv("frame")
                    end = await driver.recv("episode_end")
                    assert end["steps"] == 31  # 30 env steps + terminal observation
                    state = await driver.recv("state")
                    assert state["phase"] == "awaiting_save"

                    await driver.send({"type": "save", "confirm": True})
                    state = await driver.recv("state")
                    assert state["phase"] == "idle"
                    assert state["last_outcome"] == "completed"

                response = await client.get(f"/studies/{study['id']}/episodes")
                episodes = (await response.json())["episodes"]
                assert len(episodes) == 1
                assert episodes[0]["num_steps"] == 31
                assert episodes[0]["outcome"] == "completed"
            finally:
                await client.close()

        run(scenario())

    def test_action_while_paused_is_protocol_error(self, tmp_path):
        async def scenario():
            server, client = await make_client(tmp_path)
            try:
                study = await create_active_study(client)
                async with client.ws_connect("/ws") as ws:
                    driver = WsDriver(ws)
                    await driver.send({"type": "start_session", "study": study["id"]})
                    await driver.recv("state")
                    await driver.send({"type": "start_episode"})
                    await driver.recv("state")
                    await driver.recv("frame")
                    await driver.send({"type": "pause"})
                    state = await driver.recv("state")
                    assert state["phase"] == "paused"
                    await driver.send({"type": "action", "value": 0})
                    error = await driver.recv("error")
                    assert error["code"] == "ILLEGAL_EVENT"
            finally:
                await client.close()

        run(scenario())

    def test_cancel_persists_canceled_episode(self, tmp_path):
        async def scenario():
            server, client = await make_client(tmp_path)
            try:
                study = await create_active_study(client)
                async with client.ws_connect("/ws") as ws:
                    driver = WsDriver(ws)
                    await driver.send({"type": "start_session", "study": study["id"]})
                    await driver.recv("state")
                    await driver.send({"type": "start_episode"})
                    await driver.recv("state")
                    await driver.recv("frame")
                    await driver.send({"type": "action", "value": 3})
                    await driver.recv("frame")
                    await driver.send({"type": "cancel"})
                    state = await driver.recv("state")
                    assert state["phase"] == "idle"
                    assert state["last_outcome"] == "canceled"
                response = await client.get(f"/studies/{study['id']}/episodes")
                episodes = (await response.json())["episodes"]
                assert [e["outcome"] for e in episodes] == ["canceled"]
            finally:
                await client.close()

        run(scenario())

    def test_reconnect_resumes_paused_session(self, tmp_path):
        async def scenario():
            server, client = await make_client(tmp_path)
            try:
                study = await create_active_study(client)
                async with client.ws_connect("/ws") as ws:
                    driver = WsDriver(ws)
                    await driver.send({"type": "start_session", "study": study["id"]})
                    state = await driver.recv("state")
                    session_id = state["session"]
                    await driver.send({"type": "start_episode"})
                    await driver.recv("state")
                    await driver.recv("frame")
                    await driver.send({"type": "action", "value": 0})
                    await driver.recv("frame")
                    await driver.send({"type": "pause"})
                    state = await driver.recv("state")
                    assert state["phase"] == "paused"
                # connection dropped; resume within the pause window
                async with client.ws_connect("/ws") as ws:
                    driver = WsDriver(ws)
                    await driver.send(
                        {"type": "start_session", "study": study["id"], "session": session_id}
                    )
                    state = await driver.recv("state")
                    assert state["session"] == session_id
                    assert state["phase"] == "paused"
                    await driver.send({"type": "unpause"})
                    state = await driver.recv("state")
                    assert state["phase"] == "running"
                    await driver.send({"type": "action", "value": 0})
                    frame = await driver.recv("frame")
                    assert frame["step"] == 2  # continues the same episode
            finally:
                await client.close()

        run(scenario())

    def test_bad_version_rejected(self, tmp_path):
        async def scenario():
            server, client = await make_client(tmp_path)
            try:
                await create_active_study(client)
                async with client.ws_connect("/ws") as ws:
                    await ws.send_str(json.dumps({"v": 2, "type": "start_session"}))
                    msg = json.loads((await ws.receive()).data)
                    assert msg["type"] == "error" and msg["code"] == "BAD_VERSION"
            finally:
                await client.close()

        run(scenario())


class TestReplayAndTags:
    async def _record_one(self, client, study, actions=5):
        async with client.ws_connect("/ws") as ws:
            driver = WsDriver(ws)
            await driver.send({"type": "start_session", "study": study["id"], "user": "u9"})
            await driver.recv("state")
            await driver.send({"type": "start_episode"})
            await driver.recv("state")
            frames = [await driver.recv("frame")]
            for _ in range(actions):
                await driver.send({"type": "action", "value": 1})
                frames.append(await driver.recv("frame"))
            await driver.send({"type": "cancel"})
            await driver.recv("state")
            return frames

    def test_replay_serves_recorded_frames_verbatim(self, tmp_path):
        async def scenario():
            server, client = await make_client(tmp_path)
            try:
                study = await create_active_study(client)
                frames = await self._record_one(client, study, actions=4)
                response = await client.get(f"/studies/{study['id']}/episodes")
                [episode] = (await response.json())["episodes"]
                # 4 actions: the reset observation plus one commit per action;
                # cancel truncates the pending observation into the last step.
                assert episode["num_steps"] == 5

                for j, frame in enumerate(frames):
                    response = await client.get(f"/episodes/{episode['episode_id']}/steps/{j}")
                    step = await response.json()
                    assert step["image"] == frame["image"]  # byte-identical replay
                    assert step["step"] == j

                response = await client.get(f"/episodes/{episode['episode_id']}/steps/99")
                assert response.status == 404
            finally:
                await client.close()

        run(scenario())

    def test_tag_roundtrip_http(self, tmp_path):
        async def scenario():
            server, client = await make_client(tmp_path)
            try:
                study = await create_active_study(client)
                await self._record_one(client, study, actions=3)
                response = await client.get(f"/studies/{study['id']}/episodes")
                [episode] = (await response.json())["episodes"]
                eid = episode["episode_id"]

                response = await client.post(
                    f"/episodes/{eid}/tags",
                    json={"scope": "step", "name": "placed", "value": True, "step": 2},
                )
                assert response.status == 200
                response = await client.post(
                    f"/episodes/{eid}/tags",
                    json={"scope": "episode", "name": "success", "value": True},
                )
                assert response.status == 200

                response = await client.get(f"/episodes/{eid}/steps/2")
                assert (await response.json())["tags"] == {"placed": True}
                response = await client.get(f"/studies/{study['id']}/episodes")
                [episode] = (await response.json())["episodes"]
                assert episode["tags"] == {"success": True}
                assert episode["step_tags"] == {"2": {"placed": True}}

                response = await client.post(
                    f"/episodes/{eid}/tags",
                    json={"scope": "step", "name": "x", "step": 10**6},
                )
                assert response.status == 400
                assert (await response.json())["code"] == "INDEX_OUT_OF_RANGE"
            finally:
                await client.close()

        run(scenario())


class TestExport:
    def _populate(self, tmp_path, outcomes=("completed", "canceled", "completed")):
        """Drive sessions headlessly to persist episodes with set outcomes."""
        from epilogue.collect.session import Event, Phase

        store_ = StudyStore(tmp_path / "data")
        study = store_.create_study(
            {
                "name": "export study",
                "environments": [
                    {"env": "gridpickplace", "config": {"time_limit": 6, "seed": 3}}
                ],
                "mode": "sync",
            }
        )
        store_.activate(study.id)
        for i, outcome in enumerate(outcomes):
            session = store_.open_session(study.id, f"user-{i}", f"sess-{i}")
            session.transition(Event.START_EPISODE)
            if outcome == "completed":
                while session.phase is Phase.RUNNING:
                    session.transition(Event.ACTION, 0)
                session.transition(Event.SAVE, True)
            elif outcome == "canceled":
                session.transition(Event.ACTION, 0)
                session.transition(Event.CANCEL)
        return store_, study

    def test_completed_only_filter(self, tmp_path):
        store_, study = self._populate(tmp_path)
        out = tmp_path / "export.rlds"
        summary = store_.export(study.id, out, outcomes=("completed",))
        assert summary["episodes"] == 2
        with store.open_reader(out) as reader:
            for i in range(reader.episode_count()):
                meta = reader.episode_metadata(i)
                assert bytes(meta["outcome"][()]) == b"completed"

    def test_no_matching_episodes(self, tmp_path):
        store_, study = self._populate(tmp_path, outcomes=("canceled",))
        with pytest.raises(NoMatchingEpisodesError):
            store_.export(study.id, tmp_path / "x.rlds", outcomes=("completed",))

    def test_truncate_on_tag_lengths(self, tmp_path):
        store_, study = self._populate(tmp_path, outcomes=("completed",))
        [stored] = store_.list_episodes(study.id)
        store_.tag(stored.episode_id, "step", "placed", True, step=3)
        out = tmp_path / "trunc.rlds"
        store_.export(study.id, out, truncate_on_tag="placed")
        with store.open_reader(out) as reader:
            assert reader.num_steps(0) == 4  # k+1 steps, tag at k=3
            episode = reader.get_episode(0)
            assert bool(episode.steps[3].metadata["tag:placed"])
            assert not any(bool(s.metadata["tag:placed"]) for s in episode.steps[:3])

    def test_strip_images_removes_leaf_and_shrinks(self, tmp_path):
        store_, study = self._populate(tmp_path, outcomes=("completed", "completed"))
        full = tmp_path / "full.rlds"
        slim = tmp_path / "slim.rlds"
        store_.export(study.id, full)
        store_.export(study.id, slim, strip_images=True)
        with store.open_reader(slim) as reader:
            assert "image" not in reader.schema.step_metadata
        assert slim.stat().st_size < full.stat().st_size

    def test_export_http_roundtrip(self, tmp_path):
        async def scenario():
            server, client = await make_client(tmp_path)
            try:
                study = await create_active_study(client)
                async with client.ws_connect("/ws") as ws:
                    driver = WsDriver(ws)
                    await driver.send({"type": "start_session", "study": study["id"]})
                    await driver.recv("state")
                    await driver.send({"type": "start_episode"})
                    await driver.recv("state")
                    await driver.recv("frame")
                    for _ in range(30):
                        await driver.send({"type": "action", "value": 0})
                        await driver.recv("frame")
                    await driver.recv("episode_end")
                    await driver.recv("state")
                    await driver.send({"type": "save", "confirm": True})
                    await driver.recv("state")

                response = await client.post(
                    "/export", json={"study": study["id"], "outcomes": ["completed"]}
                )
                assert response.status == 200
                doc = await response.json()
                assert doc["episodes"] == 1
                response = await client.get(doc["download"])
                assert response.status == 200
                body = await response.read()
                assert body[:4] == b"RLDS"
            finally:
                await client.close()

        run(scenario())
