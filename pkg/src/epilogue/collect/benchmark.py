"""Recording overhead benchmark.

Measures the mean per-step cost of (a) bare scalar appends and (b) frame
rendering + PNG encoding + append at 160x160 RGB, the budget the
collection server must stay inside. Run as a module:

    python3 -m epilogue.collect.benchmark
"""

from __future__ import annotations

import os
import tempfile
import time

import numpy as np

from .. import store
from ..envs import GridPickPlace
from ..model import DatasetSchema, Leaf, StepRecord
from .images import encode_png

SCALAR_BUDGET_US = 50.0
IMAGE_BUDGET_MS = 5.0


def _scalar_step(i: int, n: int) -> StepRecord:
    last = i == n - 1
    return StepRecord(
        observation=np.float64(i),
        action=np.float64(0.0 if last else 1.0),
        reward=np.float64(0.0 if last else 0.5),
        discount=np.float64(0.0 if last else 1.0),
        is_first=i == 0,
        is_last=last,
        is_terminal=last,
    )


def measure_scalar_append(steps: int = 20_000, path: str | None = None) -> float:
    """Mean append latency in microseconds for a scalar schema."""
    schema = DatasetSchema(observation=Leaf("f64", ()), action=Leaf("f64", ()))
    with tempfile.TemporaryDirectory() as tmp:
        target = path or os.path.join(tmp, "scalar.rlds")
        writer = store.open_writer(target, schema)
        records = [_scalar_step(i % 100, 100) for i in range(steps)]
        records[0] = records[0].replace(is_first=True)
        start = time.perf_counter()
        for step in records:
            writer.append_step(step)
        elapsed = time.perf_counter() - start
        writer.finalize()
    return elapsed / steps * 1e6


def measure_image_step(steps: int = 500, path: str | None = None) -> float:
    """Mean render+encode+append latency in milliseconds at 160x160x3."""
    env = GridPickPlace(cell_pixels=20)
    env.reset()
    schema = DatasetSchema(
        observation=Leaf("f64", ()),
        action=Leaf("f64", ()),
        step_metadata={"image": Leaf("bytes", ())},
    )
    with tempfile.TemporaryDirectory() as tmp:
        target = path or os.path.join(tmp, "image.rlds")
        writer = store.open_writer(target, schema)
        start = time.perf_counter()
        for i in range(steps):
            png = encode_png(env.render())
            writer.append_step(
                _scalar_step(i, steps).replace(metadata={"image": np.array(png, dtype=object)})
            )
        elapsed = time.perf_counter() - start
        writer.finalize()
    return elapsed / steps * 1e3


def main() -> int:
    scalar_us = measure_scalar_append()
    image_ms = measure_image_step()
    print(f"scalar append:      {scalar_us:8.2f} us/step  (budget {SCALAR_BUDGET_US:.0f} us)")
    print(f"160x160 image step: {image_ms:8.3f} ms/step  (budget {IMAGE_BUDGET_MS:.0f} ms)")
    return 0 if image_ms < IMAGE_BUDGET_MS else 1


if __name__ == "__main__":
    raise SystemExit(main())
