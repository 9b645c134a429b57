"""Per-user session state machine for live collection.

Deterministic and fully headless: the clock is injectable, stepping is
driven by explicit events, and persistence happens through a callback, so
the whole machine is testable without a server or UI.

Phases and events form a total table: every (phase, event) pair is either
a defined transition or ILLEGAL_EVENT.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable

import numpy as np

from ..envs import Environment, TimeStep
from ..errors import IllegalEventError, InvalidArgumentError
from ..logger import MemorySink, RecordingEnvironment, record
from ..model import DatasetSchema, EpisodeRecord, Leaf

from .images import encode_png


class Phase(Enum):
    IDLE = "idle"
    RUNNING = "running"
    PAUSED = "paused"
    AWAITING_SAVE = "awaiting_save"
    ENDED = "ended"


class Event(Enum):
    START_EPISODE = "start_episode"
    ACTION = "action"
    PAUSE = "pause"
    UNPAUSE = "unpause"
    PAUSE_TIMEOUT = "pause_timeout"
    CANCEL = "cancel"
    EPISODE_END = "episode_end"
    SAVE = "save"
    SELECT_ENV = "select_env"
    END_SESSION = "end_session"


class EpisodeOutcome(Enum):
    COMPLETED = "completed"
    CANCELED = "canceled"
    ABANDONED = "abandoned"
    REJECTED = "rejected"


# Which events are legal in which phase; transitions carry their own logic.
LEGAL_EVENTS: dict[Phase, frozenset[Event]] = {
    Phase.IDLE: frozenset({Event.START_EPISODE, Event.SELECT_ENV, Event.END_SESSION}),
    Phase.RUNNING: frozenset(
        {Event.ACTION, Event.PAUSE, Event.CANCEL, Event.EPISODE_END, Event.END_SESSION}
    ),
    Phase.PAUSED: frozenset(
        {Event.UNPAUSE, Event.PAUSE_TIMEOUT, Event.CANCEL, Event.END_SESSION}
    ),
    Phase.AWAITING_SAVE: frozenset({Event.SAVE, Event.END_SESSION}),
    Phase.ENDED: frozenset(),
}


def collection_schema(env: Environment) -> DatasetSchema:
    """Recording schema for sessions: PNG frame per step, outcome metadata."""
    return DatasetSchema(
        observation=env.observation_spec(),
        action=env.action_spec(),
        step_metadata={"image": Leaf("bytes", ())},
        episode_metadata={
            "episode_id": Leaf("bytes", ()),
            "outcome": Leaf("bytes", ()),
            "study_id": Leaf("bytes", ()),
            "user_id": Leaf("bytes", ()),
        },
    )


@dataclass
class Frame:
    step: int
    image: bytes
    reward: float


class AsyncStepper:
    """Tick scheduler: exactly floor((t - t0) * hz) steps due by time t."""

    def __init__(self, frame_rate_hz: float, start_time: float):
        if not 1 <= frame_rate_hz <= 60:
            raise InvalidArgumentError("frame rate out of range", frame_rate_hz=frame_rate_hz)
        self.hz = frame_rate_hz
        self.t0 = start_time
        self.taken = 0

    def due(self, now: float) -> int:
        total = math.floor((now - self.t0) * self.hz)
        return max(0, total - self.taken)

    def mark(self, n: int = 1) -> None:
        self.taken += n


class Session:
    """One user's live interaction with a study.

    Side effects (environment stepping, recording, persistence) happen
    inside transitions; the caller supplies `persist` to receive finished
    episodes with their outcome. Only rejected episodes are discarded.
    """

    def __init__(
        self,
        session_id: str,
        study,
        make_env: Callable[[int], Environment],
        persist: Callable[["Session", EpisodeRecord, EpisodeOutcome], str | None],
        user_id: str = "anonymous",
        clock: Callable[[], float] | None = None,
        pause_timeout_s: float = 120.0,
    ):
        import time

        self.session_id = session_id
        self.study = study
        self.user_id = user_id
        self.phase = Phase.IDLE
        self.pause_deadline: float | None = None
        self.env_index = 0
        self.last_outcome: EpisodeOutcome | None = None
        self.last_persisted_id: str | None = None
        self.episode_steps = 0
        self.latest_action: Any = None
        self.stepper: AsyncStepper | None = None
        self.last_frame: Frame | None = None

        self._make_env = make_env
        self._persist = persist
        self._clock = clock or time.monotonic
        self._pause_timeout = pause_timeout_s
        self._env: Environment | None = None
        self._sink: MemorySink | None = None
        self._recorder: RecordingEnvironment | None = None
        self._frames: list[bytes] = []
        self._last_ts: TimeStep | None = None

    # -- environment plumbing ------------------------------------------

    def _ensure_env(self) -> None:
        if self._env is None:
            self._env = self._make_env(self.env_index)
            schema = collection_schema(self._env)
            self._sink = MemorySink(schema)

            def capture(step, env):
                png = encode_png(env.render())
                self._frames.append(png)
                return {"image": np.array(png, dtype=object)}

            self._recorder = record(self._env, self._sink, step_metadata_fn=capture)

    @property
    def mode(self) -> str:
        return self.study.mode

    @property
    def frame_rate_hz(self) -> float:
        return self.study.frame_rate_hz

    def noop_action(self):
        return self.study.environments[self.env_index].get("noop_action", 0)

    # -- the state machine ------------------------------------------------

    def transition(self, event: Event, value: Any = None) -> Phase:
        if event not in LEGAL_EVENTS[self.phase]:
            raise IllegalEventError(self.phase.value, event.value)
        handler = getattr(self, "_on_" + event.value)
        handler(value)
        return self.phase

    def _on_start_episode(self, _value) -> None:
        self._ensure_env()
        self._frames.clear()
        ts = self._recorder.reset()
        self._last_ts = ts
        self.episode_steps = 0
        self.latest_action = None
        self.last_frame = Frame(step=0, image=self._frames[-1], reward=0.0)
        self.phase = Phase.RUNNING
        if self.mode == "async":
            self.stepper = AsyncStepper(self.frame_rate_hz, self._clock())

    def _on_action(self, value) -> None:
        self.latest_action = value
        if self.mode == "sync":
            self._step_once(value)

    def _on_pause(self, _value) -> None:
        self.phase = Phase.PAUSED
        self.pause_deadline = self._clock() + self._pause_timeout

    def _on_unpause(self, _value) -> None:
        self.phase = Phase.RUNNING
        self.pause_deadline = None
        if self.stepper is not None:
            # Paused wall time does not owe environment steps.
            self.stepper = AsyncStepper(self.frame_rate_hz, self._clock())

    def _on_pause_timeout(self, _value) -> None:
        self._finish_open_episode(EpisodeOutcome.ABANDONED)
        self.pause_deadline = None
        self.phase = Phase.ENDED

    def _on_cancel(self, _value) -> None:
        self._finish_open_episode(EpisodeOutcome.CANCELED)
        self.pause_deadline = None
        self.phase = Phase.IDLE

    def _on_episode_end(self, _value) -> None:
        # The recorder already committed the episode when LAST arrived.
        self.phase = Phase.AWAITING_SAVE

    def _on_save(self, value) -> None:
        confirm = bool(value)
        episode = self._sink.episodes.pop() if self._sink and self._sink.episodes else None
        if confirm and episode is not None:
            self._commit(episode, EpisodeOutcome.COMPLETED)
        else:
            self.last_outcome = EpisodeOutcome.REJECTED
            self.last_persisted_id = None
        self.phase = Phase.IDLE

    def _on_select_env(self, value) -> None:
        index = int(value)
        if not 0 <= index < len(self.study.environments):
            raise InvalidArgumentError("environment index out of range", index=index)
        if index != self.env_index:
            self.env_index = index
            self._env = None
            self._recorder = None
            self._sink = None

    def _on_end_session(self, _value) -> None:
        if self.phase in (Phase.RUNNING, Phase.PAUSED):
            self._finish_open_episode(EpisodeOutcome.CANCELED)
        elif self.phase is Phase.AWAITING_SAVE:
            if self._sink and self._sink.episodes:
                self._sink.episodes.pop()
            self.last_outcome = EpisodeOutcome.REJECTED
        self.pause_deadline = None
        self.phase = Phase.ENDED

    # -- stepping -----------------------------------------------------------

    def _step_once(self, action) -> TimeStep:
        ts = self._recorder.step(action)
        self._last_ts = ts
        self.episode_steps += 1
        self.last_frame = Frame(
            step=self.episode_steps,
            image=self._frames[-1],
            reward=float(np.asarray(ts.reward)) if ts.reward is not None else 0.0,
        )
        if ts.last():
            self.transition(Event.EPISODE_END)
        return ts

    def tick(self, now: float | None = None) -> list[Frame]:
        """Async mode: run every step due by `now`; returns emitted frames."""
        if self.mode != "async" or self.phase is not Phase.RUNNING or self.stepper is None:
            return []
        now = self._clock() if now is None else now
        frames = []
        for _ in range(self.stepper.due(now)):
            action = self.latest_action if self.latest_action is not None else self.noop_action()
            self.stepper.mark()
            self._step_once(action)
            frames.append(self.last_frame)
            if self.phase is not Phase.RUNNING:
                break
        return frames

    def poll_timeout(self, now: float | None = None) -> bool:
        """Fire pause_timeout if the pause deadline has passed."""
        if self.phase is Phase.PAUSED and self.pause_deadline is not None:
            now = self._clock() if now is None else now
            if now >= self.pause_deadline:
                self.transition(Event.PAUSE_TIMEOUT)
                return True
        return False

    # -- episode completion -------------------------------------------------

    def _finish_open_episode(self, outcome: EpisodeOutcome) -> None:
        # Truncate the in-flight episode so every persisted record is a
        # valid episode (is_last set, not terminal).
        if self._recorder is not None:
            self._recorder.close()
        episode = self._sink.episodes.pop() if self._sink and self._sink.episodes else None
        if episode is not None:
            self._commit(episode, outcome)
        else:
            self.last_outcome = outcome

    def _commit(self, episode: EpisodeRecord, outcome: EpisodeOutcome) -> None:
        self.last_outcome = outcome
        self.last_persisted_id = self._persist(self, episode, outcome)

    @property
    def pending_episode_steps(self) -> int:
        return len(self._sink.open_steps) if self._sink else 0
