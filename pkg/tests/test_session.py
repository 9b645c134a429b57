import pytest

from epilogue import store
from epilogue.collect.session import AsyncStepper, Event, EpisodeOutcome, Phase
from epilogue.collect.studies import StudyStore
from epilogue.errors import IllegalEventError, InvalidArgumentError
from epilogue.model import Alignment, validate_episode


class FakeClock:
    def __init__(self, start=0.0):
        self.now = start

    def __call__(self):
        return self.now

    def advance(self, dt):
        self.now += dt


def make_store(tmp_path, mode="sync", time_limit=20, frame_rate_hz=15.0):
    store_ = StudyStore(tmp_path / "data")
    study = store_.create_study(
        {
            "name": "grid study",
            "instructions": "drop the can on the bin",
            "environments": [
                {"env": "gridpickplace", "config": {"time_limit": time_limit, "seed": 3}}
            ],
            "mode": mode,
            "frame_rate_hz": frame_rate_hz,
        }
    )
    store_.activate(study.id)
    return store_, study


def make_session(tmp_path, mode="sync", time_limit=20, frame_rate_hz=15.0):
    clock = FakeClock()
    store_, study = make_store(tmp_path, mode, time_limit, frame_rate_hz)
    session = store_.open_session(study.id, "user-1", "sess-1", clock=clock)
    return store_, study, session, clock


# The expected transition table, written out independently of the
# implementation: phase -> {event: target phase}.
EXPECTED_TABLE = {
    Phase.IDLE: {
        Event.START_EPISODE: Phase.RUNNING,
        Event.SELECT_ENV: Phase.IDLE,
        Event.END_SESSION: Phase.ENDED,
    },
    Phase.RUNNING: {
        Event.ACTION: Phase.RUNNING,
        Event.PAUSE: Phase.PAUSED,
        Event.CANCEL: Phase.IDLE,
        Event.EPISODE_END: Phase.AWAITING_SAVE,
        Event.END_SESSION: Phase.ENDED,
    },
    Phase.PAUSED: {
        Event.UNPAUSE: Phase.RUNNING,
        Event.PAUSE_TIMEOUT: Phase.ENDED,
        Event.CANCEL: Phase.IDLE,
        Event.END_SESSION: Phase.ENDED,
    },
    Phase.AWAITING_SAVE: {
        Event.SAVE: Phase.IDLE,
        Event.END_SESSION: Phase.ENDED,
    },
    Phase.ENDED: {},
}


def drive_to(session, phase):
    if phase is Phase.IDLE:
        return
    session.transition(Event.START_EPISODE)
    if phase is Phase.RUNNING:
        return
    if phase is Phase.PAUSED:
        session.transition(Event.PAUSE)
        return
    if phase is Phase.AWAITING_SAVE:
        session.transition(Event.EPISODE_END)
        return
    if phase is Phase.ENDED:
        session.transition(Event.END_SESSION)


class TestExhaustiveTable:
    @pytest.mark.parametrize("phase", list(Phase))
    @pytest.mark.parametrize("event", list(Event))
    def test_cell(self, tmp_path, phase, event):
        _, _, session, _ = make_session(tmp_path)
        drive_to(session, phase)
        assert session.phase is phase
        expected = EXPECTED_TABLE[phase].get(event)
        value = {Event.ACTION: 0, Event.SAVE: True, Event.SELECT_ENV: 0}.get(event)
        if expected is None:
            with pytest.raises(IllegalEventError):
                session.transition(event, value)
            assert session.phase is phase  # illegal events change nothing
        else:
            session.transition(event, value)
            assert session.phase is expected

    def test_table_is_total(self):
        # Every (phase, event) pair is either in the table or illegal.
        assert len(list(Phase)) * len(list(Event)) == 50


class TestOutcomes:
    def test_pause_timeout_abandons(self, tmp_path):
        store_, study, session, clock = make_session(tmp_path)
        session.transition(Event.START_EPISODE)
        session.transition(Event.ACTION, 0)
        session.transition(Event.PAUSE)
        assert session.pause_deadline == pytest.approx(clock.now + 120.0)
        clock.advance(121.0)
        assert session.poll_timeout()
        assert session.phase is Phase.ENDED
        assert session.last_outcome is EpisodeOutcome.ABANDONED
        [episode] = store_.list_episodes(study.id)
        assert episode.outcome is EpisodeOutcome.ABANDONED

    def test_pause_within_window_resumes(self, tmp_path):
        _, _, session, clock = make_session(tmp_path)
        session.transition(Event.START_EPISODE)
        session.transition(Event.PAUSE)
        clock.advance(60.0)
        assert not session.poll_timeout()
        session.transition(Event.UNPAUSE)
        assert session.phase is Phase.RUNNING

    def test_cancel_marks_canceled(self, tmp_path):
        store_, study, session, _ = make_session(tmp_path)
        session.transition(Event.START_EPISODE)
        session.transition(Event.ACTION, 3)
        session.transition(Event.CANCEL)
        assert session.phase is Phase.IDLE
        [episode] = store_.list_episodes(study.id)
        assert episode.outcome is EpisodeOutcome.CANCELED
        # canceled episodes end with a truncated, non-terminal last step
        assert episode.episode.steps[-1].is_last
        assert not episode.episode.steps[-1].is_terminal

    def test_save_true_completes_and_persists_to_log(self, tmp_path):
        store_, study, session, _ = make_session(tmp_path, time_limit=4)
        session.transition(Event.START_EPISODE)
        while session.phase is Phase.RUNNING:
            session.transition(Event.ACTION, 0)
        assert session.phase is Phase.AWAITING_SAVE
        session.transition(Event.SAVE, True)
        assert session.last_outcome is EpisodeOutcome.COMPLETED
        [episode] = store_.list_episodes(study.id)
        assert episode.outcome is EpisodeOutcome.COMPLETED
        assert episode.num_steps == 5  # 4 env steps + terminal observation
        store_.close()
        log = tmp_path / "data" / "episodes" / f"{study.id}.rlds"
        with store.open_reader(log) as reader:
            assert reader.episode_count() == 1
            meta = reader.episode_metadata(0)
            assert bytes(meta["outcome"][()]) == b"completed"
            assert bytes(meta["user_id"][()]) == b"user-1"

    def test_save_false_rejects_and_discards(self, tmp_path):
        store_, study, session, _ = make_session(tmp_path, time_limit=3)
        session.transition(Event.START_EPISODE)
        while session.phase is Phase.RUNNING:
            session.transition(Event.ACTION, 0)
        session.transition(Event.SAVE, False)
        assert session.last_outcome is EpisodeOutcome.REJECTED
        assert store_.list_episodes(study.id) == []

    def test_end_session_while_running_cancels(self, tmp_path):
        store_, study, session, _ = make_session(tmp_path)
        session.transition(Event.START_EPISODE)
        session.transition(Event.END_SESSION)
        [episode] = store_.list_episodes(study.id)
        assert episode.outcome is EpisodeOutcome.CANCELED

    def test_action_while_paused_illegal(self, tmp_path):
        _, _, session, _ = make_session(tmp_path)
        session.transition(Event.START_EPISODE)
        session.transition(Event.PAUSE)
        with pytest.raises(IllegalEventError):
            session.transition(Event.ACTION, 0)

    def test_pause_deadline_set_iff_paused(self, tmp_path):
        _, _, session, _ = make_session(tmp_path)
        assert session.pause_deadline is None
        session.transition(Event.START_EPISODE)
        session.transition(Event.PAUSE)
        assert session.pause_deadline is not None
        session.transition(Event.UNPAUSE)
        assert session.pause_deadline is None
        session.transition(Event.PAUSE)
        session.transition(Event.END_SESSION)
        assert session.pause_deadline is None


class TestSyncStepping:
    def test_three_actions_three_steps(self, tmp_path):
        _, _, session, _ = make_session(tmp_path)
        session.transition(Event.START_EPISODE)
        for _ in range(3):
            session.transition(Event.ACTION, 1)
        assert session.episode_steps == 3

    def test_episode_ends_at_time_limit(self, tmp_path):
        store_, study, session, _ = make_session(tmp_path, time_limit=5)
        session.transition(Event.START_EPISODE)
        steps = 0
        while session.phase is Phase.RUNNING:
            session.transition(Event.ACTION, 0)
            steps += 1
        assert steps == 5
        assert session.phase is Phase.AWAITING_SAVE


class TestAsyncStepping:
    def test_fifteen_hz_one_second_no_actions(self, tmp_path):
        _, _, session, clock = make_session(tmp_path, mode="async", frame_rate_hz=15.0)
        session.transition(Event.START_EPISODE)
        clock.advance(1.0)
        frames = session.tick()
        assert len(frames) == 15
        assert session.episode_steps == 15

    @pytest.mark.parametrize(
        "hz,duration", [(15.0, 1.0), (10.0, 2.5), (60.0, 0.5), (1.0, 3.0), (30.0, 0.0321)]
    )
    def test_floor_of_t_times_hz(self, tmp_path, hz, duration):
        import math

        _, _, session, clock = make_session(tmp_path, mode="async", frame_rate_hz=hz, time_limit=10_000)
        session.transition(Event.START_EPISODE)
        clock.advance(duration)
        session.tick()
        assert session.episode_steps == math.floor(duration * hz)

    def test_tick_accumulates_incrementally(self, tmp_path):
        _, _, session, clock = make_session(tmp_path, mode="async", frame_rate_hz=10.0)
        session.transition(Event.START_EPISODE)
        total = 0
        for _ in range(7):
            clock.advance(0.25)
            total += len(session.tick())
        assert total == session.episode_steps == 17  # floor(1.75 * 10)

    def test_action_between_ticks_applied_next_tick(self, tmp_path):
        _, _, session, clock = make_session(tmp_path, mode="async", frame_rate_hz=10.0)
        session.transition(Event.START_EPISODE)
        start = session._env._agent.copy()
        session.transition(Event.ACTION, 1)  # held action: down
        assert session.episode_steps == 0  # async: no step on the action itself
        clock.advance(0.1)
        session.tick()
        assert session.episode_steps == 1
        moved = session._env._agent
        assert moved[0] == min(7, start[0] + 1)

    def test_noop_used_before_first_action(self, tmp_path):
        _, _, session, clock = make_session(tmp_path, mode="async", frame_rate_hz=5.0)
        session.transition(Event.START_EPISODE)
        clock.advance(0.2)
        session.tick()
        [episode_steps] = [session._sink.open_steps]
        assert int(episode_steps[0].action) == 0  # configured no-op

    def test_stepper_rejects_bad_rate(self):
        with pytest.raises(InvalidArgumentError):
            AsyncStepper(0.5, 0.0)
        with pytest.raises(InvalidArgumentError):
            AsyncStepper(61.0, 0.0)


class TestRecordingIntegrity:
    def test_persisted_episode_validates_with_metadata(self, tmp_path):
        store_, study, session, _ = make_session(tmp_path, time_limit=6)
        session.transition(Event.START_EPISODE)
        while session.phase is Phase.RUNNING:
            session.transition(Event.ACTION, 2)
        session.transition(Event.SAVE, True)
        [stored] = store_.list_episodes(study.id)
        env = store_.make_env(study, 0)
        from epilogue.collect.session import collection_schema

        report = validate_episode(stored.episode, collection_schema(env), Alignment.SAR)
        assert report.ok, [str(v) for v in report.violations]
        meta = stored.episode.metadata
        for key in ("episode_id", "outcome", "study_id", "user_id"):
            assert key in meta

    def test_frames_byte_identical_to_recorded_images(self, tmp_path):
        store_, study, session, _ = make_session(tmp_path, time_limit=4)
        session.transition(Event.START_EPISODE)
        frames = [session.last_frame.image]
        while session.phase is Phase.RUNNING:
            session.transition(Event.ACTION, 1)
            frames.append(session.last_frame.image)
        session.transition(Event.SAVE, True)
        [stored] = store_.list_episodes(study.id)
        assert stored.num_steps == len(frames)
        for j in range(stored.num_steps):
            assert stored.step_image(j) == frames[j]

    def test_store_reload_restores_episodes_and_tags(self, tmp_path):
        store_, study, session, _ = make_session(tmp_path, time_limit=3)
        session.transition(Event.START_EPISODE)
        while session.phase is Phase.RUNNING:
            session.transition(Event.ACTION, 0)
        session.transition(Event.SAVE, True)
        [stored] = store_.list_episodes(study.id)
        store_.tag(stored.episode_id, "step", "placed", True, step=1)
        store_.tag(stored.episode_id, "episode", "success", True)
        store_.close()

        reloaded = StudyStore(tmp_path / "data")
        [again] = reloaded.list_episodes(study.id)
        assert again.episode_id == stored.episode_id
        assert again.step_tags == {1: {"placed": True}}
        assert again.episode_tags == {"success": True}
        assert again.step_image(0) == stored.step_image(0)
