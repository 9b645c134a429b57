"""Seeded random schema/episode generators shared across the test suite.

Float leaves are generated from raw random bits so round-trip tests cover
NaN payloads and every other bit pattern, not just nice values.
"""

import numpy as np

from epilogue import model
from epilogue.model import DatasetSchema, EpisodeRecord, Leaf, StepRecord

NUMERIC_DTYPES = ["f32", "f64", "i32", "i64", "u8", "bool"]
ALL_DTYPES = NUMERIC_DTYPES + ["bytes"]


def random_leaf(rng, max_rank=3, allow_variable=True, dtypes=ALL_DTYPES):
    dtype = dtypes[rng.integers(0, len(dtypes))]
    rank = int(rng.integers(0, max_rank + 1))
    shape = [int(rng.integers(1, 4)) for _ in range(rank)]
    if allow_variable and rank > 0 and rng.random() < 0.25:
        shape[0] = -1
    return Leaf(dtype, tuple(shape))


def random_spec(rng, max_depth=4, max_rank=3, allow_variable=True, dtypes=ALL_DTYPES):
    if max_depth <= 1 or rng.random() < 0.5:
        return random_leaf(rng, max_rank, allow_variable, dtypes)
    names = [f"f{i}{rng.integers(0, 100)}" for i in range(int(rng.integers(1, 4)))]
    return {
        name: random_spec(rng, max_depth - 1, max_rank, allow_variable, dtypes)
        for name in names
    }


def random_schema(rng, max_depth=4):
    step_meta = random_spec(rng, max_depth - 1) if rng.random() < 0.5 else {}
    episode_meta = random_spec(rng, max_depth - 1) if rng.random() < 0.5 else {}
    return DatasetSchema(
        observation=random_spec(rng, max_depth),
        action=random_spec(rng, max_depth),
        reward=random_leaf(rng, max_rank=1, allow_variable=False, dtypes=["f32", "f64"]),
        discount=random_leaf(rng, max_rank=0, allow_variable=False, dtypes=["f64"]),
        step_metadata=step_meta,
        episode_metadata=episode_meta,
    )


def random_value(rng, spec, nice=False):
    """Random leaf values; raw random bits by default, finite values if `nice`."""
    if isinstance(spec, dict):
        return {name: random_value(rng, child, nice) for name, child in spec.items()}
    shape = list(spec.shape)
    if spec.is_variable:
        shape[0] = int(rng.integers(0, 4))
    count = int(np.prod(shape)) if shape else 1
    if spec.dtype == "bytes":
        arr = np.empty(shape, dtype=object)
        flat = arr.reshape(-1)
        for i in range(count):
            flat[i] = bytes(rng.bytes(int(rng.integers(0, 7))))
        return arr
    if spec.dtype == "bool":
        return rng.integers(0, 2, size=shape).astype(np.bool_)
    dt = model.NUMPY_DTYPES[spec.dtype]
    if nice:
        if spec.dtype in ("f32", "f64"):
            return rng.normal(size=shape).astype(dt)
        return rng.integers(0, 100, size=shape).astype(dt)
    raw = rng.bytes(count * dt.itemsize)
    return np.frombuffer(raw, dtype=dt).reshape(shape).copy()


def random_episode(rng, schema, num_steps=None, terminal_prob=0.5):
    """A schema-conformant SAR episode with correct flags and fills."""
    if num_steps is None:
        num_steps = int(rng.integers(1, 8))
    steps = []
    for i in range(num_steps):
        last = i == num_steps - 1
        if last:
            action = model.undefined_fill(schema.action, variable_extent=0)
            reward = model.undefined_fill(schema.reward, variable_extent=0)
            discount = model.undefined_fill(schema.discount, variable_extent=0)
        else:
            action = random_value(rng, schema.action)
            reward = random_value(rng, schema.reward)
            discount = random_value(rng, schema.discount)
        steps.append(
            StepRecord(
                observation=random_value(rng, schema.observation),
                action=action,
                reward=reward,
                discount=discount,
                is_first=i == 0,
                is_last=last,
                is_terminal=last and rng.random() < terminal_prob,
                metadata=random_value(rng, schema.step_metadata),
            )
        )
    return EpisodeRecord(steps=steps, metadata=random_value(rng, schema.episode_metadata))


def random_dataset(rng, max_episodes=20, max_steps=50, max_depth=4):
    schema = random_schema(rng, max_depth)
    episodes = [
        random_episode(rng, schema, num_steps=int(rng.integers(1, max_steps + 1)))
        for _ in range(int(rng.integers(1, max_episodes + 1)))
    ]
    return schema, episodes


def episodes_equal(a, b):
    if len(a.steps) != len(b.steps) or not model.values_equal(a.metadata, b.metadata):
        return False
    for sa, sb in zip(a.steps, b.steps):
        if (sa.is_first, sa.is_last, sa.is_terminal) != (sb.is_first, sb.is_last, sb.is_terminal):
            return False
        for part in ("observation", "action", "reward", "discount", "metadata"):
            if not model.values_equal(getattr(sa, part), getattr(sb, part)):
                return False
    return True
