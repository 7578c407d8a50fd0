"""Grid world where scouts report the food coordinate to a victim agent."""

from dataclasses import dataclass

import numpy as np

from ..certmath import ActionKind
from ..ensemble import MessageSet
from ..errors import InvalidRangeError
from ..threat import PayloadBox
from .base import Environment, StepResult

STEP_PENALTY = -0.5
NOISE_KINDS = ("integer", "uniform")

# action id -> (dx, dy); 0 is the no-move action
DIRECTIONS = (
    (0, 0), (1, 0), (1, 1), (0, 1), (-1, 1),
    (-1, 0), (-1, -1), (0, -1), (1, -1),
)
ACTION_FOR_DIRECTION = {d: i for i, d in enumerate(DIRECTIONS)}


@dataclass(frozen=True)
class GridObservation:
    position: tuple[int, int]
    t: int


class GridFoodEnv(Environment):
    action_kind = ActionKind.DISCRETE
    n_actions = len(DIRECTIONS)

    def __init__(self, width: int = 7, height: int = 7, n_agents: int = 9, horizon: int = 20,
                 noise: float = 0, start: tuple[int, int] | None = None,
                 food: tuple[int, int] | None = None, noise_kind: str = "integer"):
        super().__init__()
        if noise_kind not in NOISE_KINDS:
            raise InvalidRangeError(f"unknown noise kind {noise_kind!r}; choose from {NOISE_KINDS}")
        if noise < 0:
            raise InvalidRangeError(f"report noise must be non-negative, got {noise}")
        if width < 2 or height < 1:
            raise InvalidRangeError(f"grid {width}x{height} is too small")
        if n_agents < 2:
            raise InvalidRangeError(f"need at least 2 agents, got {n_agents}")
        self.width = width
        self.height = height
        self.n_agents = n_agents
        self.horizon = horizon
        self.noise = noise
        self.noise_kind = noise_kind
        self._start = start
        self._food = food
        self.v_max = -STEP_PENALTY * horizon
        self.position = (0, 0)
        self.food = (0, 0)
        self._reports = np.zeros((n_agents - 1, 2))
        self._rng = np.random.default_rng(0)

    @property
    def payload_space(self) -> PayloadBox:
        """Grid cells, widened by the noise bound when reports carry uniform noise."""
        margin = float(self.noise) if self.noise_kind == "uniform" else 0.0
        return PayloadBox(np.full(2, -margin), np.array([self.width - 1, self.height - 1], dtype=float) + margin)

    def _random_cell(self):
        return (int(self._rng.integers(0, self.width)), int(self._rng.integers(0, self.height)))

    def _draw_reports(self):
        truth = np.tile(np.asarray(self.food, dtype=float), (self.n_agents - 1, 1))
        if self.noise > 0 and self.noise_kind == "uniform":
            # already inside the widened payload box
            self._reports = truth + self._rng.uniform(-self.noise, self.noise, size=truth.shape)
            return
        if self.noise > 0:
            truth = truth + self._rng.integers(-int(self.noise), int(self.noise) + 1, size=truth.shape)
        self._reports = self.payload_space.clip(truth)

    def reset(self, seed: int | None = None) -> GridObservation:
        self._rng = np.random.default_rng(seed)
        self.food = tuple(self._food) if self._food is not None else self._random_cell()
        if self._start is not None:
            self.position = tuple(self._start)
        else:
            self.position = self._random_cell()
            while self.position == self.food:
                self.position = self._random_cell()
        self.t = 0
        self.done = self.position == self.food
        self._draw_reports()
        return self.observation()

    def observation(self) -> GridObservation:
        return GridObservation(self.position, self.t)

    def messages(self) -> MessageSet:
        return MessageSet.from_payloads([row.copy() for row in self._reports])

    def _moved(self, action: int) -> tuple[int, int]:
        if not 0 <= int(action) < len(DIRECTIONS):
            raise InvalidRangeError(f"grid action {action} outside [0, {len(DIRECTIONS)})")
        dx, dy = DIRECTIONS[int(action)]
        x = min(max(self.position[0] + dx, 0), self.width - 1)
        y = min(max(self.position[1] + dy, 0), self.height - 1)
        return x, y

    def peek(self, action):
        return STEP_PENALTY, (self._moved(action), self.t + 1)

    def _advance(self, action) -> StepResult:
        self.position = self._moved(action)
        self.t += 1
        self.done = self.position == self.food or self.t >= self.horizon
        self._draw_reports()
        return StepResult(self.observation(), STEP_PENALTY, self.done)

    def chebyshev_distance(self) -> int:
        return max(abs(self.position[0] - self.food[0]), abs(self.position[1] - self.food[1]))
