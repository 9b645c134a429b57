"""Studies, persisted episodes, tags, and dataset export.

Layout under the data directory:

    studies.json            study configurations (canonical JSON)
    tags.json               tag entries, write-through
    episodes/<study>.rlds   append-only study log, one chunk per episode
    exports/<name>.rlds     export products

Episodes are kept in memory for replay/tagging and appended to the study
log as they are saved; the log is flushed per episode so an unfinalized
file is always recoverable by scanning.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np

from .. import model, store, transforms
from ..envs import make_environment
from ..errors import (
    IndexOutOfRangeError,
    InvalidArgumentError,
    NoMatchingEpisodesError,
    UnknownEpisodeError,
)
from ..model import DatasetSchema, EpisodeRecord, Leaf

from .session import EpisodeOutcome, Session, collection_schema

DEFAULT_INPUT_MAP = {
    "ArrowUp": 0,
    "ArrowDown": 1,
    "ArrowLeft": 2,
    "ArrowRight": 3,
    "KeyG": 4,
    "KeyD": 5,
}


@dataclass
class Study:
    id: str
    name: str
    instructions: str = ""
    environments: list[dict] = field(default_factory=list)
    mode: str = "sync"
    frame_rate_hz: float = 15.0
    pause_timeout_s: float = 120.0
    state: str = "draft"

    def validate(self) -> None:
        if self.mode not in ("sync", "async"):
            raise InvalidArgumentError("mode must be sync or async", mode=self.mode)
        if self.mode == "async" and not 1 <= self.frame_rate_hz <= 60:
            raise InvalidArgumentError("frame rate out of range", hz=self.frame_rate_hz)
        if not self.environments:
            raise InvalidArgumentError("study needs at least one environment")
        for entry in self.environments:
            if "env" not in entry:
                raise InvalidArgumentError("environment entry needs an env name")

    def to_doc(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "instructions": self.instructions,
            "environments": self.environments,
            "mode": self.mode,
            "frame_rate_hz": self.frame_rate_hz,
            "pause_timeout_s": self.pause_timeout_s,
            "state": self.state,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Study":
        return cls(**{k: doc[k] for k in cls.__dataclass_fields__ if k in doc})


@dataclass
class StoredEpisode:
    episode_id: str
    study_id: str
    user_id: str
    outcome: EpisodeOutcome
    episode: EpisodeRecord
    episode_tags: dict[str, Any] = field(default_factory=dict)
    step_tags: dict[int, dict[str, Any]] = field(default_factory=dict)

    @property
    def num_steps(self) -> int:
        return len(self.episode.steps)

    def rewards(self) -> list[float]:
        return [float(np.asarray(s.reward)) for s in self.episode.steps]

    def step_image(self, j: int) -> bytes:
        meta = self.episode.steps[j].metadata
        if isinstance(meta, dict) and "image" in meta:
            return bytes(model.as_leaf_array(meta["image"])[()])
        return b""


def _is_image_leaf(path: tuple[str, ...], leaf: Leaf) -> bool:
    name = path[-1] if path else ""
    return name == "image" or (leaf.dtype == "u8" and len(leaf.shape) >= 2)


class StudyRecorder:
    """Append-only log for one study; flushed per episode, finalized on close.

    Writes go to `<path>.partial` (recoverable by chunk scan at any time)
    and move to `<path>` once finalized. A fresh recorder is seeded with
    the episodes already in memory so the log always holds everything.
    """

    def __init__(self, path: str, schema: DatasetSchema, seed_episodes: Iterable[EpisodeRecord] = ()):
        self.path = path
        self._partial = path + ".partial"
        self._writer = store.open_writer(self._partial, schema)
        self._lock = threading.Lock()
        for episode in seed_episodes:
            self._append(episode)
        self._writer.flush()

    def _append(self, episode: EpisodeRecord) -> None:
        for step in episode.steps:
            self._writer.append_step(step)
        self._writer.end_episode(episode.metadata)

    def append(self, episode: EpisodeRecord) -> None:
        with self._lock:
            self._append(episode)
            self._writer.flush()

    def close(self) -> None:
        with self._lock:
            if not self._writer._closed:
                self._writer.finalize()
                os.replace(self._partial, self.path)


class StudyStore:
    """All studies and their episodes; single-writer, many readers."""

    def __init__(self, data_dir: str | os.PathLike):
        self.data_dir = os.fspath(data_dir)
        os.makedirs(os.path.join(self.data_dir, "episodes"), exist_ok=True)
        os.makedirs(os.path.join(self.data_dir, "exports"), exist_ok=True)
        self.studies: dict[str, Study] = {}
        self.episodes: dict[str, list[StoredEpisode]] = {}
        self._by_episode_id: dict[str, StoredEpisode] = {}
        self._recorders: dict[str, StudyRecorder] = {}
        self._lock = threading.Lock()
        self._load()

    # -- persistence of configuration ----------------------------------

    def _studies_path(self) -> str:
        return os.path.join(self.data_dir, "studies.json")

    def _tags_path(self) -> str:
        return os.path.join(self.data_dir, "tags.json")

    def _load(self) -> None:
        if os.path.exists(self._studies_path()):
            with open(self._studies_path(), "rb") as f:
                for doc in json.loads(f.read().decode("utf-8")):
                    study = Study.from_doc(doc)
                    self.studies[study.id] = study
                    self.episodes[study.id] = []
        tags: dict = {}
        if os.path.exists(self._tags_path()):
            with open(self._tags_path(), "rb") as f:
                tags = json.loads(f.read().decode("utf-8"))
        for study_id in self.studies:
            self._load_episodes(study_id, tags)

    def _load_episodes(self, study_id: str, tags: dict) -> None:
        """Rebuild the in-memory episode list from the study log."""
        base = os.path.join(self.data_dir, "episodes", f"{study_id}.rlds")
        path = base if os.path.exists(base) else base + ".partial"
        if not os.path.exists(path):
            return
        reader, _ = store.recover(path)
        with reader:
            for episode in reader.iter_episodes():
                meta = episode.metadata
                episode_id = bytes(model.as_leaf_array(meta["episode_id"])[()]).decode()
                outcome = EpisodeOutcome(bytes(model.as_leaf_array(meta["outcome"])[()]).decode())
                user_id = bytes(model.as_leaf_array(meta["user_id"])[()]).decode()
                stored = StoredEpisode(episode_id, study_id, user_id, outcome, episode)
                entry = tags.get(episode_id, {})
                stored.episode_tags = dict(entry.get("episode", {}))
                stored.step_tags = {
                    int(i): dict(t) for i, t in entry.get("steps", {}).items()
                }
                self.episodes[study_id].append(stored)
                self._by_episode_id[episode_id] = stored

    def _save_studies(self) -> None:
        docs = [self.studies[sid].to_doc() for sid in sorted(self.studies)]
        with open(self._studies_path(), "wb") as f:
            f.write(model.canonical_json(docs))

    def _save_tags(self) -> None:
        doc = {}
        for sid, stored in self.episodes.items():
            for ep in stored:
                if ep.episode_tags or ep.step_tags:
                    doc[ep.episode_id] = {
                        "episode": ep.episode_tags,
                        "steps": {str(i): tags for i, tags in ep.step_tags.items()},
                    }
        with open(self._tags_path(), "wb") as f:
            f.write(model.canonical_json(doc))

    # -- studies -----------------------------------------------------------

    def create_study(self, doc: dict) -> Study:
        with self._lock:
            study_id = f"s{len(self.studies) + 1:04d}"
            environments = []
            for entry in doc.get("environments", []):
                entry = dict(entry)
                entry.setdefault("input_map", dict(DEFAULT_INPUT_MAP))
                entry.setdefault("noop_action", 0)
                environments.append(entry)
            study = Study(
                id=study_id,
                name=doc.get("name", study_id),
                instructions=doc.get("instructions", ""),
                environments=environments,
                mode=doc.get("mode", "sync"),
                frame_rate_hz=float(doc.get("frame_rate_hz", 15.0)),
                pause_timeout_s=float(doc.get("pause_timeout_s", 120.0)),
            )
            study.validate()
            # All environments must share one schema (one log per study).
            schemas = {
                make_environment(e["env"], **e.get("config", {})).schema().canonical_bytes()
                for e in study.environments
            }
            if len(schemas) > 1:
                raise InvalidArgumentError("study environments have incompatible specs")
            self.studies[study_id] = study
            self.episodes[study_id] = []
            self._save_studies()
            return study

    def activate(self, study_id: str) -> Study:
        study = self.get_study(study_id)
        study.state = "active"
        self._save_studies()
        return study

    def get_study(self, study_id: str) -> Study:
        if study_id not in self.studies:
            raise InvalidArgumentError("unknown study", study=study_id)
        return self.studies[study_id]

    def make_env(self, study: Study, index: int):
        entry = study.environments[index]
        return make_environment(entry["env"], **entry.get("config", {}))

    def open_session(self, study_id: str, user_id: str, session_id: str, clock=None) -> Session:
        study = self.get_study(study_id)
        if study.state != "active":
            raise InvalidArgumentError("study is not active", study=study_id, state=study.state)
        return Session(
            session_id=session_id,
            study=study,
            make_env=lambda index: self.make_env(study, index),
            persist=lambda session, episode, outcome: self.persist_episode(
                study_id, session.user_id, episode, outcome
            ),
            user_id=user_id,
            clock=clock,
            pause_timeout_s=study.pause_timeout_s,
        )

    # -- episodes ----------------------------------------------------------

    def persist_episode(
        self, study_id: str, user_id: str, episode: EpisodeRecord, outcome: EpisodeOutcome
    ) -> str:
        """Stamp metadata, append to the study log, keep in memory."""
        with self._lock:
            recorder = self._recorder_for(study_id)
            stored_list = self.episodes[study_id]
            episode_id = f"{study_id}-{len(stored_list):05d}"
            episode = EpisodeRecord(
                steps=episode.steps,
                metadata={
                    "episode_id": np.array(episode_id.encode(), dtype=object),
                    "outcome": np.array(outcome.value.encode(), dtype=object),
                    "study_id": np.array(study_id.encode(), dtype=object),
                    "user_id": np.array(user_id.encode(), dtype=object),
                },
            )
            stored = StoredEpisode(episode_id, study_id, user_id, outcome, episode)
            stored_list.append(stored)
            self._by_episode_id[episode_id] = stored
            recorder.append(episode)
            return episode_id

    def _recorder_for(self, study_id: str) -> StudyRecorder:
        if study_id not in self._recorders:
            study = self.studies[study_id]
            env = self.make_env(study, 0)
            schema = collection_schema(env)
            path = os.path.join(self.data_dir, "episodes", f"{study_id}.rlds")
            seed = [s.episode for s in self.episodes[study_id]]
            self._recorders[study_id] = StudyRecorder(path, schema, seed)
        return self._recorders[study_id]

    def get_episode(self, episode_id: str) -> StoredEpisode:
        if episode_id not in self._by_episode_id:
            raise UnknownEpisodeError("no such episode", episode=episode_id)
        return self._by_episode_id[episode_id]

    def list_episodes(self, study_id: str) -> list[StoredEpisode]:
        self.get_study(study_id)
        return list(self.episodes.get(study_id, []))

    # -- tagging ------------------------------------------------------------

    def tag(
        self,
        episode_id: str,
        scope: str,
        name: str,
        value: Any = True,
        step: int | None = None,
    ) -> None:
        if not isinstance(value, (bool, str)):
            raise InvalidArgumentError("tag value must be bool or text", value=value)
        stored = self.get_episode(episode_id)
        if scope == "episode":
            stored.episode_tags[name] = value
        elif scope == "step":
            if step is None or not 0 <= step < stored.num_steps:
                raise IndexOutOfRangeError(
                    "step index out of range", step=step, count=stored.num_steps
                )
            stored.step_tags.setdefault(step, {})[name] = value
        else:
            raise InvalidArgumentError("scope must be episode or step", scope=scope)
        self._save_tags()

    # -- export ---------------------------------------------------------------

    def export(
        self,
        study_id: str,
        out_path: str | os.PathLike,
        outcomes: Iterable[str] | None = ("completed",),
        episode_ids: Iterable[str] | None = None,
        strip_images: bool = False,
        truncate_on_tag: str | None = None,
        compression: str = "deflate",
    ) -> dict:
        """Write selected episodes (tags folded into metadata) to a log file."""
        study = self.get_study(study_id)
        selected = self.episodes.get(study_id, [])
        if outcomes is not None:
            wanted = {o if isinstance(o, str) else o.value for o in outcomes}
            selected = [e for e in selected if e.outcome.value in wanted]
        if episode_ids is not None:
            ids = set(episode_ids)
            selected = [e for e in selected if e.episode_id in ids]
        if not selected:
            raise NoMatchingEpisodesError("no episodes match the export filter", study=study_id)

        env = self.make_env(study, 0)
        base = collection_schema(env)

        def tag_leaf(value) -> Leaf:
            return Leaf("bool" if isinstance(value, bool) else "bytes", ())

        step_tag_specs: dict[str, Leaf] = {}
        episode_tag_specs: dict[str, Leaf] = {}
        for stored in selected:
            for name, value in stored.episode_tags.items():
                episode_tag_specs[f"tag:{name}"] = tag_leaf(value)
            for tags in stored.step_tags.values():
                for name, value in tags.items():
                    step_tag_specs[f"tag:{name}"] = tag_leaf(value)
        if truncate_on_tag is not None and f"tag:{truncate_on_tag}" not in step_tag_specs:
            step_tag_specs[f"tag:{truncate_on_tag}"] = Leaf("bool", ())

        step_meta_spec = dict(base.step_metadata)
        if strip_images:
            step_meta_spec = {
                name: leaf
                for name, leaf in step_meta_spec.items()
                if not _is_image_leaf((name,), leaf)
            }
        step_meta_spec.update(step_tag_specs)
        episode_meta_spec = dict(base.episode_metadata)
        episode_meta_spec.update(episode_tag_specs)

        schema = DatasetSchema(
            observation=base.observation,
            action=base.action,
            reward=base.reward,
            discount=base.discount,
            step_metadata=step_meta_spec,
            episode_metadata=episode_meta_spec,
            dataset_metadata={"study": study.name, "study_id": study_id},
        )

        def tag_value(value, leaf: Leaf):
            if leaf.dtype == "bool":
                return np.bool_(bool(value))
            return np.array(str(value).encode(), dtype=object)

        writer = store.open_writer(out_path, schema, compression=compression)
        total_steps = 0
        for stored in selected:
            steps = []
            for j, step in enumerate(stored.episode.steps):
                meta = dict(step.metadata) if isinstance(step.metadata, dict) else {}
                if strip_images:
                    meta = {k: v for k, v in meta.items() if k in step_meta_spec}
                for field_name, leaf in step_tag_specs.items():
                    tag_name = field_name[len("tag:"):]
                    raw = stored.step_tags.get(j, {}).get(tag_name)
                    if raw is None:
                        meta[field_name] = model.undefined_fill(leaf)
                    else:
                        meta[field_name] = tag_value(raw, leaf)
                steps.append(step.replace(metadata=meta))
            if truncate_on_tag is not None:
                condition_field = f"tag:{truncate_on_tag}"
                steps = list(
                    transforms.truncate_after_condition(
                        steps, lambda s: bool(np.any(np.asarray(s.metadata[condition_field])))
                    )
                )
                if steps and not steps[-1].is_last:
                    steps[-1] = steps[-1].replace(is_last=True)
            episode_meta = dict(stored.episode.metadata)
            for field_name, leaf in episode_tag_specs.items():
                tag_name = field_name[len("tag:"):]
                raw = stored.episode_tags.get(tag_name)
                episode_meta[field_name] = (
                    model.undefined_fill(leaf) if raw is None else tag_value(raw, leaf)
                )
            for step in steps:
                writer.append_step(step)
            writer.end_episode(episode_meta)
            total_steps += len(steps)
        summary = writer.finalize()
        return {"path": os.fspath(out_path), **summary}

    def close(self) -> None:
        for recorder in self._recorders.values():
            recorder.close()
        self._recorders.clear()
