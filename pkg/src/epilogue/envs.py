"""Environment interface, built-in toy environments, and scripted agents.

Environments follow reset/step timestep semantics: reset returns a FIRST
timestep (no reward/discount), step returns MID or LAST, and stepping after
LAST behaves as reset (auto-restart). A LAST timestep with discount 0
denotes a true terminal state; a time limit yields LAST with discount 1.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable

import numpy as np

from .errors import InvalidArgumentError
from .model import DatasetSchema, FeatureSpec, Leaf


class StepType(Enum):
    FIRST = 0
    MID = 1
    LAST = 2


@dataclass
class TimeStep:
    step_type: StepType
    reward: Any  # None at FIRST
    discount: Any  # None at FIRST
    observation: Any

    def first(self) -> bool:
        return self.step_type is StepType.FIRST

    def last(self) -> bool:
        return self.step_type is StepType.LAST


class Environment(abc.ABC):
    """Stateful environment; subclasses implement _reset and _step."""

    def __init__(self):
        self._needs_reset = True

    @abc.abstractmethod
    def observation_spec(self) -> FeatureSpec: ...

    @abc.abstractmethod
    def action_spec(self) -> FeatureSpec: ...

    @abc.abstractmethod
    def _reset(self) -> TimeStep: ...

    @abc.abstractmethod
    def _step(self, action) -> TimeStep: ...

    def reset(self) -> TimeStep:
        self._needs_reset = False
        return self._reset()

    def step(self, action) -> TimeStep:
        if self._needs_reset:
            return self.reset()
        ts = self._step(action)
        self._needs_reset = ts.last()
        return ts

    def render(self) -> np.ndarray:
        raise NotImplementedError

    def seed(self, value: int) -> None:
        raise NotImplementedError

    def schema(self, **kwargs) -> DatasetSchema:
        """Dataset schema matching this environment's specs."""
        return DatasetSchema(
            observation=self.observation_spec(), action=self.action_spec(), **kwargs
        )


# Actions for the grid environment.
UP, DOWN, LEFT, RIGHT, GRAB, DROP = range(6)
NUM_ACTIONS = 6


class GridPickPlace(Environment):
    """8x8 pick-and-place grid.

    The agent walks the grid, grabs the can (when standing on it) and drops
    it; dropping the can on the bin pays +1 exactly once and terminates the
    episode. Episodes also end at a step limit (default 400) without a
    terminal state. Deterministic under seed.
    """

    def __init__(self, size: int = 8, time_limit: int = 400, cell_pixels: int = 20, seed: int = 0):
        super().__init__()
        if size < 2:
            raise InvalidArgumentError("grid too small", size=size)
        self.size = size
        self.time_limit = time_limit
        self.cell_pixels = cell_pixels
        self._rng = np.random.default_rng(seed)
        self._agent = np.zeros(2, np.int64)
        self._can = np.zeros(2, np.int64)
        self._bin = np.zeros(2, np.int64)
        self._holding = False
        self._placed = False
        self._steps = 0

    def observation_spec(self):
        return {
            "agent": Leaf("i64", (2,)),
            "bin": Leaf("i64", (2,)),
            "can": Leaf("i64", (2,)),
            "holding": Leaf("bool", ()),
        }

    def action_spec(self):
        return Leaf("i64", ())

    def seed(self, value: int) -> None:
        self._rng = np.random.default_rng(value)

    def _observe(self):
        return {
            "agent": self._agent.copy(),
            "bin": self._bin.copy(),
            "can": (self._agent if self._holding else self._can).copy(),
            "holding": np.bool_(self._holding),
        }

    def _reset(self) -> TimeStep:
        cells = self._rng.choice(self.size * self.size, size=3, replace=False)
        self._agent = np.array(divmod(int(cells[0]), self.size), np.int64)
        self._can = np.array(divmod(int(cells[1]), self.size), np.int64)
        self._bin = np.array(divmod(int(cells[2]), self.size), np.int64)
        self._holding = False
        self._placed = False
        self._steps = 0
        return TimeStep(StepType.FIRST, None, None, self._observe())

    def _step(self, action) -> TimeStep:
        action = int(np.asarray(action))
        if not 0 <= action < NUM_ACTIONS:
            raise InvalidArgumentError("action out of range", action=action)
        self._steps += 1
        reward = 0.0
        terminal = False
        if action == UP:
            self._agent[0] = max(0, self._agent[0] - 1)
        elif action == DOWN:
            self._agent[0] = min(self.size - 1, self._agent[0] + 1)
        elif action == LEFT:
            self._agent[1] = max(0, self._agent[1] - 1)
        elif action == RIGHT:
            self._agent[1] = min(self.size - 1, self._agent[1] + 1)
        elif action == GRAB:
            if not self._holding and np.array_equal(self._agent, self._can):
                self._holding = True
        elif action == DROP:
            if self._holding:
                self._holding = False
                self._can = self._agent.copy()
                if np.array_equal(self._can, self._bin) and not self._placed:
                    reward = 1.0
                    self._placed = True
                    terminal = True

        if terminal:
            step_type, discount = StepType.LAST, 0.0
        elif self._steps >= self.time_limit:
            step_type, discount = StepType.LAST, 1.0
        else:
            step_type, discount = StepType.MID, 1.0
        return TimeStep(step_type, np.float64(reward), np.float64(discount), self._observe())

    def render(self) -> np.ndarray:
        px = self.cell_pixels
        image = np.full((self.size * px, self.size * px, 3), 40, np.uint8)

        def cell(pos, color, inset=0):
            r, c = int(pos[0]), int(pos[1])
            image[r * px + inset : (r + 1) * px - inset, c * px + inset : (c + 1) * px - inset] = color

        cell(self._bin, (60, 90, 220))
        if not self._holding:
            cell(self._can, (230, 120, 40))
        cell(self._agent, (60, 200, 80), inset=2)
        if self._holding:
            cell(self._agent, (230, 120, 40), inset=px // 3)
        return image


def _toward(delta_r: int, delta_c: int) -> int:
    if abs(delta_r) >= abs(delta_c) and delta_r != 0:
        return DOWN if delta_r > 0 else UP
    return RIGHT if delta_c > 0 else LEFT


def _planner_action(observation) -> int:
    agent = observation["agent"]
    target = observation["bin"] if observation["holding"] else observation["can"]
    dr, dc = int(target[0] - agent[0]), int(target[1] - agent[1])
    if dr == 0 and dc == 0:
        return DROP if observation["holding"] else GRAB
    return _toward(dr, dc)


def scripted_agent(kind: str, eps: float = 0.0) -> Callable:
    """Policy callback (observation, rng) -> action.

    `planner` walks the shortest path to the can, grabs it, walks to the
    bin and drops, taking a uniform random action with probability `eps`;
    `uniform_random` ignores the observation.
    """
    if not 0.0 <= eps <= 1.0:
        raise InvalidArgumentError("eps must be within [0, 1]", eps=eps)
    if kind == "uniform_random":
        return lambda observation, rng: np.int64(rng.integers(0, NUM_ACTIONS))
    if kind == "planner":

        def policy(observation, rng):
            if eps > 0.0 and rng.random() < eps:
                return np.int64(rng.integers(0, NUM_ACTIONS))
            return np.int64(_planner_action(observation))

        return policy
    raise InvalidArgumentError("unknown agent kind", kind=kind)


ENVIRONMENTS = {"gridpickplace": GridPickPlace}


def make_environment(name: str, **config) -> Environment:
    try:
        factory = ENVIRONMENTS[name]
    except KeyError:
        raise InvalidArgumentError("unknown environment", name=name) from None
    return factory(**config)
