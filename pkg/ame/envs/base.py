import copy
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Hashable

from ..certmath import ActionKind
from ..ensemble import MessageSet
from ..errors import EpisodeFinishedError


@dataclass(frozen=True)
class StepResult:
    observation: Any
    reward: float
    done: bool


class Environment(ABC):
    """Single-victim environment: the victim receives N-1 messages per step.

    Transitions are deterministic given the reset seed, so ``clone`` gives an
    exact model for look-ahead search and discrepancy estimation.
    """

    n_agents: int
    horizon: int
    action_kind: ActionKind
    v_max: float = 0.0

    def __init__(self):
        self.t = 0
        self.done = False

    @abstractmethod
    def reset(self, seed: int | None = None) -> Any:
        ...

    @abstractmethod
    def observation(self) -> Any:
        ...

    @abstractmethod
    def messages(self) -> MessageSet:
        """Benign messages for the current step."""

    @abstractmethod
    def peek(self, action) -> tuple[float, Hashable]:
        """(reward, next-state key) of ``action`` without advancing the episode."""

    @abstractmethod
    def _advance(self, action) -> StepResult:
        ...

    @property
    @abstractmethod
    def payload_space(self):
        ...

    def step(self, action) -> StepResult:
        if self.done:
            raise EpisodeFinishedError(f"{type(self).__name__} episode already finished at t={self.t}")
        return self._advance(action)

    def clone(self) -> "Environment":
        return copy.deepcopy(self)
