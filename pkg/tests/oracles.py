"""Naive fully-materialized reference implementations of every operator.

These stay deliberately independent of the streaming code paths: plain
list slicing, whole-dataset materialization, direct numpy reductions.
Tests assert element-wise equality between each operator and its twin.
"""

import numpy as np

from epilogue import model
from epilogue.model import Alignment, EpisodeRecord
from epilogue.transforms import SplitMix64, Transition


def shift_alignment_oracle(episode, to, current=Alignment.SAR):
    if to is current:
        return episode
    n = len(episode.steps)
    rewards = [s.reward for s in episode.steps]
    discounts = [s.discount for s in episode.steps]
    if current is Alignment.SAR:
        new_rewards = [model.zeros_like_value(rewards[0])] + rewards[: n - 1]
        new_discounts = [model.zeros_like_value(discounts[0])] + discounts[: n - 1]
    else:
        new_rewards = rewards[1:] + [model.zeros_like_value(rewards[-1])]
        new_discounts = discounts[1:] + [model.zeros_like_value(discounts[-1])]
    steps = [
        s.replace(reward=r, discount=d)
        for s, r, d in zip(episode.steps, new_rewards, new_discounts)
    ]
    return EpisodeRecord(steps=steps, metadata=episode.metadata)


def batch_steps_oracle(steps, size, shift=1, drop_remainder=True):
    steps = list(steps)
    windows = []
    start = 0
    while start < len(steps):
        window = steps[start : start + size]
        if len(window) == size:
            windows.append(window)
        elif window and not drop_remainder:
            windows.append(window)
        if len(window) < size:
            break
        start += shift
    return windows


def make_transitions_oracle(episode):
    steps = list(episode.steps)
    return [
        Transition(
            s_cur=steps[k].observation,
            a=steps[k].action,
            r=steps[k].reward,
            s_next=steps[k + 1].observation,
        )
        for k in range(len(steps) - 1)
    ]


def truncate_after_condition_oracle(steps, condition):
    steps = list(steps)
    for i, step in enumerate(steps):
        if condition(step):
            return steps[: i + 1]
    return steps


def concat_if_terminal_oracle(episode, make_extra_steps):
    if episode.steps and episode.steps[-1].is_terminal:
        return EpisodeRecord(
            steps=list(episode.steps) + list(make_extra_steps(episode.steps[-1])),
            metadata=episode.metadata,
        )
    return episode


def to_absorbing_oracle(dataset):
    out = []
    for episode in dataset:
        episode = concat_if_terminal_oracle(episode, lambda final: [final])
        steps = []
        for step in episode.steps:
            bit = 1 if step.is_terminal else 0
            obs = np.asarray(step.observation)
            action = step.action
            is_last = step.is_last
            if step.is_terminal:
                obs = np.zeros_like(obs)
                action = model.zeros_like_value(action)
                is_last = False
            obs = np.concatenate([obs, np.asarray([bit], dtype=obs.dtype)])
            steps.append(
                step.replace(observation=obs, action=action, is_terminal=False, is_last=is_last)
            )
        out.append(EpisodeRecord(steps=steps, metadata=episode.metadata))
    return out


def pad_steps_oracle(steps, count, template):
    steps = list(steps)
    pad = template.replace(
        observation=model.zeros_like_value(template.observation),
        action=model.zeros_like_value(template.action),
        reward=model.zeros_like_value(template.reward),
        discount=model.zeros_like_value(template.discount),
        is_first=False,
        is_last=False,
        is_terminal=False,
        metadata=model.zeros_like_value(template.metadata),
    )
    return steps + [pad] * count


def _select_oracle(step, selector):
    parts = [p for p in selector.split("/") if p]
    value = getattr(step, parts[0] if parts[0] != "step_metadata" else "metadata")
    for key in parts[1:]:
        value = value[key]
    return np.asarray(value)


def _defined_oracle(root, step, alignment):
    if root in ("observation", "metadata", "step_metadata"):
        return True
    if alignment is Alignment.SAR:
        return not step.is_last
    if root == "action":
        return not step.is_last
    return not step.is_first


def field_statistics_oracle(dataset, selector, alignment=Alignment.SAR):
    root = selector.split("/")[0]
    values = []
    for episode in dataset:
        for step in episode.steps:
            if not _defined_oracle(root, step, alignment):
                continue
            values.extend(_select_oracle(step, selector).astype(np.float64).ravel().tolist())
    if not values:
        return {"count": 0, "mean": None, "std": None, "min": None, "max": None}
    arr = np.asarray(values, dtype=np.float64)
    return {
        "count": int(arr.size),
        "mean": float(arr.mean()),
        "std": float(arr.std()),
        "min": float(arr.min()),
        "max": float(arr.max()),
    }


def episode_return_oracle(steps, truncate_condition=None):
    steps = list(steps)
    if truncate_condition is not None:
        steps = truncate_after_condition_oracle(steps, truncate_condition)
    return float(
        sum(float(np.sum(np.asarray(s.reward, np.float64))) for s in steps if not s.is_last)
    )


def sample_episodes_oracle(dataset, buffer, seed, k):
    """Same windowed-shuffle contract, re-derived with explicit lists."""
    episodes = list(dataset)
    rng = SplitMix64(seed)
    window = episodes[:buffer]
    rest = episodes[buffer:]
    out = []
    for incoming in rest:
        idx = rng.randint(len(window))
        out.append(window[idx])
        window[idx] = incoming
    while window:
        idx = rng.randint(len(window))
        out.append(window.pop(idx))
    return out[:k]
