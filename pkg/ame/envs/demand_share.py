"""Inventory environment where sellers share their observed product demand."""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..certmath import ActionKind
from ..ensemble import MessageSet
from ..errors import DimensionMismatchError, InvalidRangeError
from ..threat import PayloadBox
from .base import Environment, StepResult


@dataclass(frozen=True)
class DemandObservation:
    inventory: np.ndarray
    own_demand: np.ndarray
    t: int


def restock_reward(inventory: np.ndarray, action: np.ndarray, demand: np.ndarray) -> float:
    return -float(np.linalg.norm(np.maximum(inventory + action, 0.0) - demand))


class DemandShareEnv(Environment):
    """Victim seller restocks M products against a seeded demand stream.

    Step t pays -||max(I + a, 0) - d_t||; the victim acts on demand observed at
    step t-1 (its own row plus the N-1 messages). Leftover stock is
    max(max(I + a, 0) - d_t, 0).
    """

    action_kind = ActionKind.CONTINUOUS

    def __init__(self, n_agents: int = 10, products: int = 3, buyers: int = 300, horizon: int = 50,
                 demand_schedule: Sequence[np.ndarray] | None = None,
                 initial_inventory: Sequence[float] | None = None):
        super().__init__()
        if n_agents < 2 or products < 1:
            raise InvalidRangeError(f"need N >= 2 and M >= 1, got N={n_agents}, M={products}")
        self.n_agents = n_agents
        self.products = products
        self.buyers = buyers
        self.horizon = horizon
        self.per_agent = max(int(round(buyers / n_agents)), 1)
        self._schedule = None if demand_schedule is None else [np.asarray(d, dtype=float) for d in demand_schedule]
        if self._schedule is not None:
            if len(self._schedule) < horizon + 1:
                raise InvalidRangeError(f"demand schedule needs {horizon + 1} rounds, got {len(self._schedule)}")
            for rnd in self._schedule:
                if rnd.shape != (n_agents, products):
                    raise DimensionMismatchError(f"demand round shape {rnd.shape} != {(n_agents, products)}")
        self._initial = None if initial_inventory is None else np.asarray(initial_inventory, dtype=float)
        self.v_max = 0.0
        self.inventory = np.zeros(products)
        self.distribution = np.full(products, 1.0 / products)
        self._observed = np.zeros((n_agents, products))
        self._pending = np.zeros((n_agents, products))
        self._rng = np.random.default_rng(0)

    @property
    def payload_space(self) -> PayloadBox:
        return PayloadBox(np.zeros(self.products), np.full(self.products, float(self.per_agent)))

    def _draw_round(self, index: int) -> np.ndarray:
        if self._schedule is not None:
            return self._schedule[index].copy()
        return self._rng.multinomial(self.per_agent, self.distribution, size=self.n_agents).astype(float)

    def reset(self, seed: int | None = None) -> DemandObservation:
        self._rng = np.random.default_rng(seed)
        self.distribution = self._rng.dirichlet(np.ones(self.products))
        if self._initial is not None:
            self.inventory = self._initial.copy()
        else:
            self.inventory = self._rng.uniform(0.0, self.buyers / self.n_agents, self.products)
        self.t = 0
        self.done = self.horizon <= 0
        self._observed = self._draw_round(0)
        self._pending = self._draw_round(1)
        return self.observation()

    def observation(self) -> DemandObservation:
        return DemandObservation(self.inventory.copy(), self._observed[0].copy(), self.t)

    def messages(self) -> MessageSet:
        return MessageSet.from_payloads([row.copy() for row in self._observed[1:]])

    def _check_action(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=float)
        if a.shape != (self.products,):
            raise DimensionMismatchError(f"restock action shape {a.shape} != ({self.products},)")
        return a

    def _next_inventory(self, a: np.ndarray) -> np.ndarray:
        return np.maximum(np.maximum(self.inventory + a, 0.0) - self._pending[0], 0.0)

    def peek(self, action):
        a = self._check_action(action)
        key = tuple(np.round(self._next_inventory(a), 9))
        return restock_reward(self.inventory, a, self._pending[0]), key

    def critical_actions(self, low: np.ndarray, high: np.ndarray) -> list[np.ndarray]:
        """Actions inside [low, high] where the restock reward peaks."""
        return [np.clip(self._pending[0] - self.inventory, low, high)]

    def _advance(self, action) -> StepResult:
        a = self._check_action(action)
        reward = restock_reward(self.inventory, a, self._pending[0])
        self.inventory = self._next_inventory(a)
        self.t += 1
        self.done = self.t >= self.horizon
        self._observed = self._pending
        if not self.done:
            self._pending = self._draw_round(self.t + 1)
        return StepResult(self.observation(), reward, self.done)
