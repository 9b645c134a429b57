"""Lossless episodic decision-making datasets.

A self-describing chunked record format (`store`), an environment logger
(`envs`, `logger`), streaming transformations (`transforms`), a dataset
catalog (`catalog`), declarative pipelines and a CLI (`pipeline`, `cli`),
and a human collection server (`collect`).
"""

from .model import (
    Alignment,
    DatasetSchema,
    EpisodeRecord,
    Leaf,
    StepRecord,
    undefined_fill,
    validate_episode,
)
from .store import Reader, Writer, open_reader, open_writer, recover
from .envs import Environment, GridPickPlace, TimeStep, StepType, scripted_agent
from .logger import MemorySink, RecordingEnvironment, generate, record
from .transforms import (
    Transition,
    batch_steps,
    concat_if_terminal,
    episode_return,
    field_statistics,
    make_transitions,
    map_steps,
    pad_steps,
    sample_episodes,
    shift_alignment,
    to_absorbing,
    truncate_after_condition,
)

__version__ = "0.1.0"

__all__ = [
    "Alignment",
    "DatasetSchema",
    "EpisodeRecord",
    "Environment",
    "GridPickPlace",
    "Leaf",
    "MemorySink",
    "Reader",
    "RecordingEnvironment",
    "StepRecord",
    "StepType",
    "TimeStep",
    "Transition",
    "Writer",
    "batch_steps",
    "concat_if_terminal",
    "episode_return",
    "field_statistics",
    "generate",
    "make_transitions",
    "map_steps",
    "open_reader",
    "open_writer",
    "pad_steps",
    "record",
    "recover",
    "sample_episodes",
    "scripted_agent",
    "shift_alignment",
    "to_absorbing",
    "truncate_after_condition",
    "undefined_fill",
    "validate_episode",
]
