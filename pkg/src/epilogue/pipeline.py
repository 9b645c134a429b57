"""Declarative streaming pipelines over datasets.

A pipeline document names an input (a log file or a catalog dataset), an
ordered list of stages, and an optional output. Every stage declares the
stream kind it consumes and produces; the whole chain is kind-checked
before anything executes, so a miswired pipeline fails fast with the
offending stage index.

Kinds: episode (nested observations), flat_episode (single-vector
observations), step, transition, report.
"""

from __future__ import annotations

import itertools
import json
import os
from dataclasses import dataclass
from typing import Any, Callable, Iterator

import numpy as np

from . import catalog, model, store, transforms
from .errors import (
    InvalidArgumentError,
    PipelineKindMismatchError,
    UnsupportedDtypeError,
)
from .model import Alignment, DatasetSchema, EpisodeRecord

EPISODE = "episode"
FLAT_EPISODE = "flat_episode"
STEP = "step"
TRANSITION = "transition"
REPORT = "report"

EPISODIC = (EPISODE, FLAT_EPISODE)


def tag_field(name: str) -> str:
    return f"tag:{name}"


def tag_condition(name: str) -> Callable:
    field = tag_field(name)

    def is_tagged(step) -> bool:
        value = step.metadata.get(field) if isinstance(step.metadata, dict) else None
        return value is not None and bool(np.any(np.asarray(value)))

    return is_tagged


def flatten_observation(step):
    """Concatenate observation leaves (canonical order) into one f64 vector."""
    spec = model.infer_spec(step.observation)
    parts = []
    for path, leaf in model.walk_spec(spec):
        if leaf.dtype == "bytes":
            raise UnsupportedDtypeError("cannot flatten bytes leaves", path="/".join(path))
        arr = model.get_path(step.observation, path) if path else step.observation
        parts.append(np.asarray(arr, dtype=np.float64).ravel())
    return step.replace(observation=np.concatenate(parts) if parts else np.zeros(0))


@dataclass(frozen=True)
class StageDef:
    input_kinds: tuple[str, ...]
    output_kind: str | None  # None: output kind equals input kind
    build: Callable[[dict], Callable[[Any], Any]]


def _flatten_steps(stream) -> Iterator:
    for episode in stream:
        yield from episode.steps


def _returns_stage(params):
    tag = params.get("truncate_on_tag")
    condition = tag_condition(tag) if tag else None

    def run(stream):
        rows = [transforms.episode_return(e.steps, condition) for e in stream]
        return {"kind": "returns", "returns": rows, "count": len(rows)}

    return run


def _histogram_stage(params):
    field = params["field"]
    bins = int(params.get("bins", 20))

    def run(stream):
        values: list[float] = []
        for step in stream:
            values.extend(np.asarray(step_field(step, field), dtype=np.float64).ravel().tolist())
        if values:
            counts, edges = np.histogram(np.asarray(values), bins=bins)
            table = [
                [float(edges[i]), float(edges[i + 1]), int(counts[i])] for i in range(len(counts))
            ]
        else:
            table = []
        return {"kind": "histogram", "field": field, "count": len(values), "bins": table}

    return run


def step_field(step, selector: str):
    root, path = transforms._resolve_selector(selector)
    return transforms._select(step, root, path, selector)


STAGES: dict[str, StageDef] = {
    "sample": StageDef(
        EPISODIC,
        None,
        lambda p: lambda s: transforms.sample_episodes(
            s, buffer=int(p.get("buffer", 30)), seed=int(p.get("seed", 0)), k=int(p["k"])
        ),
    ),
    "shift_alignment": StageDef(
        EPISODIC,
        None,
        lambda p: lambda s: (
            transforms.shift_alignment(
                e, Alignment(p["to"]), Alignment(p.get("from", "sar"))
            )
            for e in s
        ),
    ),
    "truncate_on_tag": StageDef(
        EPISODIC,
        None,
        lambda p: lambda s: (
            EpisodeRecord(
                steps=list(transforms.truncate_after_condition(e.steps, tag_condition(p["tag"]))),
                metadata=e.metadata,
            )
            for e in s
        ),
    ),
    "flatten_observation": StageDef(
        (EPISODE,),
        FLAT_EPISODE,
        lambda p: lambda s: transforms.map_steps(s, flatten_observation),
    ),
    "to_absorbing": StageDef(
        (FLAT_EPISODE,),
        FLAT_EPISODE,
        lambda p: lambda s: transforms.to_absorbing(s),
    ),
    "transitions": StageDef(
        (FLAT_EPISODE,),
        TRANSITION,
        lambda p: lambda s: (t for e in s for t in transforms.make_transitions(e)),
    ),
    "steps": StageDef(EPISODIC, STEP, lambda p: _flatten_steps),
    "stats": StageDef(
        (STEP,),
        REPORT,
        lambda p: lambda s: {
            "kind": "stats",
            "field": p["field"],
            **transforms.step_field_statistics(s, p["field"]),
        },
    ),
    "histogram": StageDef((STEP,), REPORT, _histogram_stage),
    "returns": StageDef(EPISODIC, REPORT, _returns_stage),
    "count": StageDef(
        (EPISODE, FLAT_EPISODE, STEP, TRANSITION),
        REPORT,
        lambda p: lambda s: {"kind": "count", "count": sum(1 for _ in s)},
    ),
}


@dataclass
class PipelineSpec:
    input: dict
    stages: list[dict]
    output: dict | None = None

    @classmethod
    def parse(cls, doc: dict) -> "PipelineSpec":
        if "input" not in doc:
            raise InvalidArgumentError("pipeline needs an input")
        stages = doc.get("stages", [])
        for i, stage in enumerate(stages):
            if "op" not in stage or stage["op"] not in STAGES:
                raise InvalidArgumentError("unknown pipeline stage", stage=i, op=stage.get("op"))
        return cls(input=doc["input"], stages=list(stages), output=doc.get("output"))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PipelineSpec":
        with open(path, "rb") as f:
            return cls.parse(json.loads(f.read().decode("utf-8")))

    def check_kinds(self) -> str:
        """Validate the stage chain before execution; returns the final kind."""
        kind = EPISODE
        for i, stage in enumerate(self.stages):
            definition = STAGES[stage["op"]]
            if kind not in definition.input_kinds:
                raise PipelineKindMismatchError(
                    f"stage {stage['op']!r} consumes {'/'.join(definition.input_kinds)}, got {kind}",
                    stage_index=i,
                )
            kind = definition.output_kind or kind
        if self.output and "file" in self.output and kind not in EPISODIC:
            raise PipelineKindMismatchError(
                f"file output needs an episode stream, got {kind}", stage_index=len(self.stages)
            )
        return kind


def open_input(spec_input: dict, cache_dir=None):
    """Episode stream for a pipeline input reference."""
    if "file" in spec_input:
        reader = store.open_reader(spec_input["file"])
        return reader.iter_episodes()
    if "dataset" in spec_input:
        episodes, _ = catalog.load(
            spec_input["dataset"],
            spec_input.get("split", "train"),
            spec_input.get("store", "catalog"),
            version=spec_input.get("version"),
            cache_dir=cache_dir,
        )
        return episodes
    raise InvalidArgumentError("input must name a file or a dataset")


def write_episodes(path: str | os.PathLike, stream, compression: str = "deflate") -> dict:
    """Materialize an episode stream into a log file, inferring the schema
    from the first episode."""
    iterator = iter(stream)
    try:
        first = next(iterator)
    except StopIteration:
        raise InvalidArgumentError("cannot write an empty episode stream") from None
    schema = DatasetSchema(
        observation=model.infer_spec(first.steps[0].observation),
        action=model.infer_spec(first.steps[0].action),
        reward=model.infer_spec(first.steps[0].reward),
        discount=model.infer_spec(first.steps[0].discount),
        step_metadata=model.infer_spec(first.steps[0].metadata),
        episode_metadata=model.infer_spec(first.metadata),
    )
    writer = store.open_writer(path, schema, compression=compression)
    for episode in itertools.chain([first], iterator):
        for step in episode.steps:
            writer.append_step(step)
        writer.end_episode(episode.metadata)
    return writer.finalize()


def run(spec: PipelineSpec, cache_dir=None) -> dict:
    """Kind-check then execute; returns a result summary document."""
    final_kind = spec.check_kinds()
    stream: Any = open_input(spec.input, cache_dir)
    for stage in spec.stages:
        params = {k: v for k, v in stage.items() if k != "op"}
        stream = STAGES[stage["op"]].build(params)(stream)

    if final_kind == REPORT:
        return stream  # stages with REPORT output return the document itself
    if spec.output and "file" in spec.output:
        summary = write_episodes(
            spec.output["file"], stream, spec.output.get("compression", "deflate")
        )
        return {"kind": "written", "path": spec.output["file"], **summary}
    return {"kind": "count", "count": sum(1 for _ in stream)}
