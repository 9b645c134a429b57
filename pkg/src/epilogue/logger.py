"""Recording wrapper turning timestep streams into stored SAR episodes.

The mapping: reset opens a pending step at the first observation; each
step(action) completes the pending step with (action, reward, discount)
and opens a new pending step at the returned observation; a LAST timestep
additionally commits its observation as the final step with is_last set
(is_terminal iff discount == 0) and undefined action/reward/discount.
Every stored episode therefore has one more step than the number of
step() calls that produced it.
"""

from __future__ import annotations

from typing import Any, Callable, Protocol

import numpy as np

from . import model
from .envs import Environment, TimeStep
from .errors import InvalidArgumentError
from .model import EpisodeRecord, StepRecord


class EpisodeSink(Protocol):
    """Anything accepting steps and episode boundaries (Writer, buffers)."""

    schema: model.DatasetSchema

    def append_step(self, step: StepRecord) -> None: ...

    def end_episode(self, metadata=None) -> None: ...


class MemorySink:
    """Buffers complete episodes in memory; used by the collection server."""

    def __init__(self, schema: model.DatasetSchema):
        self.schema = schema
        self.episodes: list[EpisodeRecord] = []
        self._steps: list[StepRecord] = []

    def append_step(self, step: StepRecord) -> None:
        self._steps.append(step)

    def end_episode(self, metadata=None) -> None:
        if metadata is None:
            metadata = model.undefined_fill(self.schema.episode_metadata, variable_extent=0)
        self.episodes.append(EpisodeRecord(steps=self._steps, metadata=metadata))
        self._steps = []

    @property
    def open_steps(self) -> list[StepRecord]:
        return self._steps


class RecordingEnvironment(Environment):
    """Transparent wrapper: forwards every call, logs every interaction."""

    def __init__(
        self,
        env: Environment,
        sink: EpisodeSink,
        step_metadata_fn: Callable[[StepRecord, Environment], Any] | None = None,
        episode_metadata_fn: Callable[[Environment], Any] | None = None,
    ):
        super().__init__()
        self._env = env
        self._sink = sink
        self._step_metadata_fn = step_metadata_fn
        self._episode_metadata_fn = episode_metadata_fn
        self._schema = sink.schema
        self._pending: StepRecord | None = None
        self._fill = {
            part: model.undefined_fill(self._schema.part(part), variable_extent=0)
            for part in ("action", "reward", "discount")
        }

    # -- environment interface (transparent) -----------------------------

    def observation_spec(self):
        return self._env.observation_spec()

    def action_spec(self):
        return self._env.action_spec()

    def render(self):
        return self._env.render()

    def seed(self, value: int) -> None:
        self._env.seed(value)

    def _reset(self) -> TimeStep:
        self._truncate_open_episode()
        ts = self._env.reset()
        self._open_pending(ts, is_first=True)
        return ts

    def _step(self, action) -> TimeStep:
        ts = self._env.step(action)
        if ts.first():
            # Underlying auto-restart: close out the previous episode.
            self._truncate_open_episode()
            self._open_pending(ts, is_first=True)
            return ts
        pending = self._pending
        if pending is None:
            raise InvalidArgumentError("step() before reset() on recording wrapper")
        self._sink.append_step(
            pending.replace(action=np.asarray(action), reward=ts.reward, discount=ts.discount)
        )
        if ts.last():
            terminal = bool(np.all(np.asarray(ts.discount) == 0))
            final = StepRecord(
                observation=ts.observation,
                action=self._fill["action"],
                reward=self._fill["reward"],
                discount=self._fill["discount"],
                is_first=False,
                is_last=True,
                is_terminal=terminal,
            )
            final.metadata = self._invoke_metadata(final)
            self._sink.append_step(final)
            self._end_episode()
            self._pending = None
        else:
            self._open_pending(ts, is_first=False)
        return ts

    def close(self) -> None:
        """Commit any open episode as truncated; keeps all observed data."""
        self._truncate_open_episode()

    def __enter__(self) -> "RecordingEnvironment":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            self.close()

    # -- internals --------------------------------------------------------

    def _invoke_metadata(self, step: StepRecord):
        if self._step_metadata_fn is None:
            return model.undefined_fill(self._schema.step_metadata, variable_extent=0)
        return self._step_metadata_fn(step, self._env)

    def _open_pending(self, ts: TimeStep, is_first: bool) -> None:
        step = StepRecord(
            observation=ts.observation,
            action=self._fill["action"],
            reward=self._fill["reward"],
            discount=self._fill["discount"],
            is_first=is_first,
            is_last=False,
            is_terminal=False,
        )
        step.metadata = self._invoke_metadata(step)
        self._pending = step

    def _truncate_open_episode(self) -> None:
        # A reset (or close) with an episode in flight: the pending
        # observation becomes a truncated, non-terminal final step.
        if self._pending is None:
            return
        self._sink.append_step(self._pending.replace(is_last=True))
        self._end_episode()
        self._pending = None

    def _end_episode(self) -> None:
        metadata = self._episode_metadata_fn(self._env) if self._episode_metadata_fn else None
        self._sink.end_episode(metadata)


def record(
    env: Environment,
    sink: EpisodeSink,
    step_metadata_fn: Callable[[StepRecord, Environment], Any] | None = None,
    episode_metadata_fn: Callable[[Environment], Any] | None = None,
) -> RecordingEnvironment:
    """Wrap `env` so every interaction is logged to `sink`."""
    schema = sink.schema
    if model.spec_to_doc(env.observation_spec()) != model.spec_to_doc(schema.observation):
        raise InvalidArgumentError("sink schema observation spec differs from environment")
    if model.spec_to_doc(env.action_spec()) != model.spec_to_doc(schema.action):
        raise InvalidArgumentError("sink schema action spec differs from environment")
    return RecordingEnvironment(env, sink, step_metadata_fn, episode_metadata_fn)


def generate(
    env: Environment,
    agent: Callable,
    episodes: int,
    seed: int,
    sink: EpisodeSink,
    step_metadata_fn: Callable | None = None,
    episode_metadata_fn: Callable | None = None,
) -> dict:
    """Run `agent` for exactly `episodes` episodes, logging to `sink`.

    Fully deterministic: the environment is seeded with 2*seed+1 and the
    agent's generator with 2*seed+2.
    """
    if episodes < 1:
        raise InvalidArgumentError("episodes must be >= 1", episodes=episodes)
    env.seed(2 * seed + 1)
    rng = np.random.default_rng(2 * seed + 2)
    recorder = record(env, sink, step_metadata_fn, episode_metadata_fn)
    total_steps = 0
    successes = 0
    for _ in range(episodes):
        ts = recorder.reset()
        while not ts.last():
            action = agent(ts.observation, rng)
            ts = recorder.step(action)
            total_steps += 1
        if bool(np.all(np.asarray(ts.discount) == 0)):
            successes += 1
    return {"episodes": episodes, "env_steps": total_steps, "terminal_episodes": successes}
