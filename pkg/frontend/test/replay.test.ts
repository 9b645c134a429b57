import assert from "node:assert/strict";
import { test } from "node:test";

import { EpisodeSummary, ReplayView } from "../src/replay.js";

function summary(rewards: number[]): EpisodeSummary {
  return {
    episode_id: "s0001-00000",
    outcome: "completed",
    user_id: "u1",
    num_steps: rewards.length,
    rewards,
    tags: {},
    step_tags: {},
  };
}

test("cursor clamps to the episode bounds", () => {
  const view = new ReplayView(summary([0, 0, 0, 0, 0]));
  assert.equal(view.setCursor(3), 3);
  assert.equal(view.setCursor(99), 4);
  assert.equal(view.setCursor(-5), 0);
  assert.equal(view.setCursor(2.7), 2); // truncation, not rounding
});

test("profile clicks jump to the nearest step", () => {
  const view = new ReplayView(summary([0, 0, 1, 0]));
  assert.equal(view.jumpToProfile(2.2), 2);
  assert.equal(view.jumpToProfile(2.6), 3);
  assert.equal(view.jumpToProfile(-1), 0);
});

test("spike step finds the reward jump", () => {
  const rewards = new Array(400).fill(0.0);
  rewards[123] = 1.0;
  const view = new ReplayView(summary(rewards));
  assert.equal(view.spikeStep(), 123);
  view.setCursor(view.spikeStep());
  assert.equal(view.cursor, 123);
});

test("spike step on flat rewards is the first step", () => {
  const view = new ReplayView(summary([0.5, 0.5, 0.5]));
  assert.equal(view.spikeStep(), 0);
});
