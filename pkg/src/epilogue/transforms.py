"""Streaming transformations over episode and step streams.

Operators are lazy, pull-based, and never materialize whole datasets;
windowing and transition building respect episode boundaries by
construction. Statistics accumulate in float64 with a numerically stable
single-pass update. Undefined fields are excluded by alignment rule, not
by sentinel value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Iterable, Iterator

import numpy as np

from . import model
from .errors import (
    InvalidArgumentError,
    InvalidEpisodeError,
    NonVectorObservationError,
    TransformApplyError,
    UnknownFieldError,
    UnsupportedDtypeError,
)
from .model import Alignment, EpisodeRecord, StepRecord

StepStream = Iterable[StepRecord]
EpisodeStream = Iterable[EpisodeRecord]


@dataclass
class Transition:
    """(s_cur, a, r, s_next); never built across an episode boundary."""

    s_cur: Any
    a: Any
    r: Any
    s_next: Any


# -- alignment ------------------------------------------------------------

def _check_flags(episode: EpisodeRecord) -> None:
    steps = episode.steps
    if not steps:
        raise InvalidEpisodeError("empty episode")
    if not steps[0].is_first or not steps[-1].is_last:
        raise InvalidEpisodeError("episode lacks first/last flags")


def shift_alignment(
    episode: EpisodeRecord, to: Alignment, current: Alignment = Alignment.SAR
) -> EpisodeRecord:
    """Move reward/discount across the step boundary between SAR and RSA.

    Observations, actions, and flags stay in place. Requesting the current
    alignment is a no-op (the input object is returned unchanged, which is
    the report). SAR->RSA and RSA->SAR are exact inverses on defined fields.
    """
    if to is current:
        return episode
    _check_flags(episode)
    steps = episode.steps
    out = []
    if current is Alignment.SAR:  # to RSA: reward/discount shift one step later
        for t, step in enumerate(steps):
            if t == 0:
                reward = model.zeros_like_value(step.reward)
                discount = model.zeros_like_value(step.discount)
            else:
                reward, discount = steps[t - 1].reward, steps[t - 1].discount
            out.append(step.replace(reward=reward, discount=discount))
    else:  # RSA -> SAR: reward/discount shift one step earlier
        for t, step in enumerate(steps):
            if t == len(steps) - 1:
                reward = model.zeros_like_value(step.reward)
                discount = model.zeros_like_value(step.discount)
            else:
                reward, discount = steps[t + 1].reward, steps[t + 1].discount
            out.append(step.replace(reward=reward, discount=discount))
    return EpisodeRecord(steps=out, metadata=episode.metadata)


# -- windowing and transitions ----------------------------------------------

def batch_steps(
    steps: StepStream, size: int, shift: int = 1, drop_remainder: bool = True
) -> Iterator[list[StepRecord]]:
    """Sliding windows over one episode's steps; never crosses episodes."""
    if size < 1 or shift < 1:
        raise InvalidArgumentError("size and shift must be >= 1", size=size, shift=shift)
    window: list[StepRecord] = []
    to_skip = 0
    for step in steps:
        if to_skip:
            to_skip -= 1
            continue
        window.append(step)
        if len(window) == size:
            yield list(window)
            if shift >= size:
                window = []
                to_skip = shift - size
            else:
                window = window[shift:]
    if window and not drop_remainder and len(window) < size:
        # Only the first short tail window is the remainder.
        yield window


def make_transitions(episode: EpisodeRecord) -> Iterator[Transition]:
    """Adjacent SAR step pairs as transitions; len(steps)-1 of them."""
    steps = episode.steps
    for k in range(len(steps) - 1):
        yield Transition(
            s_cur=steps[k].observation,
            a=steps[k].action,
            r=steps[k].reward,
            s_next=steps[k + 1].observation,
        )


def truncate_after_condition(
    steps: StepStream, condition: Callable[[StepRecord], bool]
) -> Iterator[StepRecord]:
    """Steps up to and including the first satisfying one; stops pulling after."""
    for step in steps:
        yield step
        if condition(step):
            return


def concat_if_terminal(
    episode: EpisodeRecord, make_extra_steps: Callable[[StepRecord], StepStream]
) -> EpisodeRecord:
    """Append make_extra_steps(final) after a terminal final step; noop otherwise."""
    if not episode.steps or not episode.steps[-1].is_terminal:
        return episode
    extra = list(make_extra_steps(episode.steps[-1]))
    return EpisodeRecord(steps=episode.steps + extra, metadata=episode.metadata)


# -- absorbing terminal states ------------------------------------------------

def _absorbing_step(step: StepRecord) -> StepRecord:
    if isinstance(step.observation, dict):
        raise NonVectorObservationError("flatten observations before absorbing conversion")
    observation = model.as_leaf_array(step.observation)
    if observation.ndim != 1 or observation.dtype == object:
        raise NonVectorObservationError(
            "absorbing conversion needs flat numeric vector observations"
        )
    bit = step.is_terminal
    action = step.action
    is_last = step.is_last
    if step.is_terminal:
        observation = np.zeros_like(observation)
        action = model.zeros_like_value(action)
        is_last = False
    observation = np.concatenate([observation, np.array([bit], dtype=observation.dtype)])
    return step.replace(
        observation=observation, action=action, is_terminal=False, is_last=is_last
    )


def to_absorbing(dataset: EpisodeStream) -> Iterator[EpisodeRecord]:
    """Absorbing-state conversion for imitation learning.

    Terminal final steps are duplicated, then every formerly-terminal step
    gets zeroed observation/action and cleared terminal/last flags; all
    observations gain a trailing bit (1 exactly on those steps). Outputs
    are pipeline values exempt from storage flag invariants.
    """
    for episode in dataset:
        extended = concat_if_terminal(episode, lambda final: [final])
        yield EpisodeRecord(
            steps=[_absorbing_step(s) for s in extended.steps],
            metadata=extended.metadata,
        )


# -- map / apply ---------------------------------------------------------------

def map_steps(dataset: EpisodeStream, fn: Callable[[StepRecord], StepRecord]) -> Iterator[EpisodeRecord]:
    """Apply fn to every step, preserving order and episode structure."""
    for e_idx, episode in enumerate(dataset):
        steps = []
        for s_idx, step in enumerate(episode.steps):
            try:
                steps.append(fn(step))
            except Exception as exc:
                raise TransformApplyError(str(exc), e_idx, s_idx) from exc
        yield EpisodeRecord(steps=steps, metadata=episode.metadata)


def apply_episodes(
    dataset: EpisodeStream, fn: Callable[[EpisodeRecord], EpisodeRecord]
) -> Iterator[EpisodeRecord]:
    for e_idx, episode in enumerate(dataset):
        try:
            yield fn(episode)
        except Exception as exc:
            raise TransformApplyError(str(exc), e_idx) from exc


# -- padding -------------------------------------------------------------------

def zero_step(template: StepRecord) -> StepRecord:
    """An empty step shaped like `template`: zero fields, all flags false."""
    return StepRecord(
        observation=model.zeros_like_value(template.observation),
        action=model.zeros_like_value(template.action),
        reward=model.zeros_like_value(template.reward),
        discount=model.zeros_like_value(template.discount),
        is_first=False,
        is_last=False,
        is_terminal=False,
        metadata=model.zeros_like_value(template.metadata),
    )


def pad_steps(steps: StepStream, count: int, template: StepRecord) -> Iterator[StepRecord]:
    """Yield the input then `count` zero-filled steps shaped like template."""
    if count < 0:
        raise InvalidArgumentError("count must be >= 0", count=count)
    yield from steps
    if count:
        padding = zero_step(template)
        for _ in range(count):
            yield padding


# -- field selection and statistics ---------------------------------------------

_ROOTS = ("observation", "action", "reward", "discount", "metadata")


def _resolve_selector(selector: str) -> tuple[str, tuple[str, ...]]:
    parts = tuple(p for p in selector.split("/") if p)
    if not parts:
        raise UnknownFieldError("empty selector")
    root = "metadata" if parts[0] == "step_metadata" else parts[0]
    if root not in _ROOTS:
        raise UnknownFieldError("selector must start with a step field", selector=selector)
    return root, parts[1:]


def _select(step: StepRecord, root: str, path: tuple[str, ...], selector: str) -> np.ndarray:
    value = getattr(step, root)
    for key in path:
        if not isinstance(value, dict) or key not in value:
            raise UnknownFieldError("no such field", selector=selector)
        value = value[key]
    if isinstance(value, dict):
        raise UnknownFieldError("selector names an internal node", selector=selector)
    arr = model.as_leaf_array(value)
    if arr.dtype == object:
        raise UnsupportedDtypeError("bytes fields have no statistics", selector=selector)
    return arr


def _defined(root: str, step: StepRecord, alignment: Alignment) -> bool:
    """Definedness is derived from flags + alignment, never from a mask."""
    if root in ("observation", "metadata"):
        return True
    if alignment is Alignment.SAR:
        return not step.is_last
    if root == "action":
        return not step.is_last
    return not step.is_first  # RSA reward/discount


class _RunningStats:
    """Single-pass mean/variance via pairwise merges; exact for constants."""

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.minimum = np.inf
        self.maximum = -np.inf

    def add(self, arr: np.ndarray) -> None:
        n = arr.size
        if n == 0:
            return
        batch_mean = float(arr.mean())
        batch_m2 = float(((arr - batch_mean) ** 2).sum())
        delta = batch_mean - self.mean
        total = self.count + n
        self.mean += delta * n / total
        self.m2 += batch_m2 + delta * delta * self.count * n / total
        self.count = total
        self.minimum = min(self.minimum, float(arr.min()))
        self.maximum = max(self.maximum, float(arr.max()))

    def result(self) -> dict:
        if self.count == 0:
            return {"count": 0, "mean": None, "std": None, "min": None, "max": None}
        return {
            "count": self.count,
            "mean": self.mean,
            "std": float(np.sqrt(self.m2 / self.count)),
            "min": self.minimum,
            "max": self.maximum,
        }


def step_field_statistics(
    steps: StepStream, selector: str, alignment: Alignment = Alignment.SAR
) -> dict:
    """field_statistics over an already-flattened step stream."""
    root, path = _resolve_selector(selector)
    stats = _RunningStats()
    for step in steps:
        if _defined(root, step, alignment):
            stats.add(_select(step, root, path, selector).astype(np.float64, copy=False))
    return stats.result()


def field_statistics(
    dataset: EpisodeStream, selector: str, alignment: Alignment = Alignment.SAR
) -> dict:
    """Streaming {count, mean, std, min, max} over all defined occurrences.

    Bool promotes to {0,1}; bytes raise UNSUPPORTED_DTYPE. Accumulation is
    float64 with a stable pairwise variance merge; std is the population
    standard deviation.
    """
    root, path = _resolve_selector(selector)
    stats = _RunningStats()
    for episode in dataset:
        for step in episode.steps:
            if _defined(root, step, alignment):
                stats.add(_select(step, root, path, selector).astype(np.float64, copy=False))
    return stats.result()


def sum_field(
    steps: StepStream, selector: str, alignment: Alignment = Alignment.SAR
) -> np.ndarray:
    """Elementwise float64 sum of a leaf over a step stream's defined steps."""
    root, path = _resolve_selector(selector)
    total = None
    for step in steps:
        if not _defined(root, step, alignment):
            continue
        arr = _select(step, root, path, selector).astype(np.float64)
        total = arr if total is None else total + arr
    return np.zeros((), np.float64) if total is None else total


def episode_return(
    steps: StepStream, truncate_condition: Callable[[StepRecord], bool] | None = None
) -> float:
    """Sum of defined rewards, optionally up to a condition (inclusive)."""
    if truncate_condition is not None:
        steps = truncate_after_condition(steps, truncate_condition)
    total = 0.0
    for step in steps:
        if step.is_last:  # SAR: last-step reward undefined
            continue
        total += float(np.sum(np.asarray(step.reward, dtype=np.float64)))
    return total


# -- deterministic sampling ----------------------------------------------------

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """Tiny pinned PRNG so sampled subsets are reproducible everywhere."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def randint(self, n: int) -> int:
        return self.next_u64() % n


def sample_episodes(dataset: EpisodeStream, buffer: int, seed: int, k: int) -> Iterator[EpisodeRecord]:
    """Windowed-shuffle then take(k): fill a buffer, repeatedly emit a
    uniformly chosen occupant and refill from the stream. buffer=1 is the
    identity order; replays with the same seed yield the same sequence."""
    if buffer < 1:
        raise InvalidArgumentError("buffer must be >= 1", buffer=buffer)
    if k == 0:
        return
    rng = SplitMix64(seed)
    iterator = iter(dataset)
    window: list[EpisodeRecord] = []
    for episode in iterator:
        window.append(episode)
        if len(window) == buffer:
            break
    emitted = 0
    for incoming in iterator:
        idx = rng.randint(len(window))
        outgoing = window[idx]
        window[idx] = incoming
        yield outgoing
        emitted += 1
        if emitted == k:
            return
    while window:
        idx = rng.randint(len(window))
        yield window.pop(idx)
        emitted += 1
        if emitted == k:
            return
