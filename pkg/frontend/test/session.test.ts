import assert from "node:assert/strict";
import { test } from "node:test";

import { ClientMessage, StateMessage } from "../src/protocol.js";
import { ClientSession } from "../src/session.js";

function stateMessage(phase: StateMessage["phase"], extra: Partial<StateMessage> = {}): StateMessage {
  return {
    v: 1,
    type: "state",
    phase,
    session: "sess-1",
    study: "s0001",
    env_index: 0,
    input_map: { ArrowUp: 0, ArrowDown: 1, KeyG: 4 },
    mode: "sync",
    instructions: "",
    last_outcome: null,
    last_episode_id: null,
    ...extra,
  };
}

function makeSession() {
  const sent: ClientMessage[] = [];
  const session = new ClientSession((msg) => sent.push(msg));
  return { session, sent };
}

test("phase mirror only changes on state messages", () => {
  const { session } = makeSession();
  assert.equal(session.phase, "idle");
  session.handleServer({ v: 1, type: "frame", step: 1, image: "", reward: 0 });
  session.handleServer({ v: 1, type: "error", code: "X", message: "boom" });
  session.handleServer({ v: 1, type: "episode_end", steps: 5 });
  assert.equal(session.phase, "idle");
  session.handleServer(stateMessage("running"));
  assert.equal(session.phase, "running");
  session.handleServer(stateMessage("paused"));
  assert.equal(session.phase, "paused");
});

test("N mapped keydowns while running send exactly N action messages", () => {
  const { session, sent } = makeSession();
  session.handleServer(stateMessage("running"));
  for (let i = 0; i < 20; i++) {
    assert.equal(session.keydown("ArrowUp"), true);
  }
  const actions = sent.filter((m) => m.type === "action");
  assert.equal(actions.length, 20);
  assert.ok(actions.every((m) => m.value === 0 && m.v === 1));
  assert.equal(session.actionsSent, 20);
});

test("unmapped keys and wrong phases send nothing", () => {
  const { session, sent } = makeSession();
  session.handleServer(stateMessage("running"));
  assert.equal(session.keydown("KeyZ"), false);
  session.handleServer(stateMessage("paused"));
  assert.equal(session.keydown("ArrowUp"), false);
  session.handleServer(stateMessage("awaiting_save"));
  assert.equal(session.keydown("ArrowUp"), false);
  assert.equal(sent.filter((m) => m.type === "action").length, 0);
  assert.equal(session.movementEnabled(), false);
});

test("controls emit the protocol messages", () => {
  const { session, sent } = makeSession();
  session.open("s0001", "u1");
  session.startEpisode();
  session.pause();
  session.unpause();
  session.cancel();
  session.save(true);
  session.save(false);
  session.endSession();
  assert.deepEqual(
    sent.map((m) => m.type),
    [
      "start_session",
      "start_episode",
      "pause",
      "unpause",
      "cancel",
      "save",
      "save",
      "end_session",
    ],
  );
  assert.equal(sent[5].confirm, true);
  assert.equal(sent[6].confirm, false);
  assert.ok(sent.every((m) => m.v === 1));
});

test("input map and outcome flow from state messages", () => {
  const { session } = makeSession();
  session.handleServer(
    stateMessage("idle", { last_outcome: "completed", last_episode_id: "s0001-00000" }),
  );
  assert.equal(session.lastOutcome, "completed");
  assert.equal(session.lastEpisodeId, "s0001-00000");
  assert.deepEqual(session.inputMap.KeyG, 4);
});

test("frames are surfaced and retained", () => {
  const { session } = makeSession();
  const frames: number[] = [];
  const withCallback = new ClientSession(() => {}, { onFrame: (f) => frames.push(f.step) });
  withCallback.handleServer({ v: 1, type: "frame", step: 3, image: "QUJD", reward: 0.5 });
  assert.deepEqual(frames, [3]);
  assert.equal(withCallback.lastFrame?.reward, 0.5);
  assert.equal(session.lastFrame, null);
});
