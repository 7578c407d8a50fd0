"""Scripted base policies standing in for trained message-ablation policies."""

from collections import Counter
from dataclasses import dataclass

import numpy as np

from ..certmath import ActionKind
from ..ensemble import AblationPolicy, KSample
from ..errors import InvalidRangeError
from .grid_food import ACTION_FOR_DIRECTION, GridObservation

AGGREGATES = {"median": np.median, "mean": np.mean}


@dataclass(frozen=True)
class GridFoodPolicy(AblationPolicy):
    """Step toward the aggregated food reports of the k sampled scouts."""

    ablation_size: int = 1
    aggregate: str = "median"
    use_messages: bool = True

    action_kind = ActionKind.DISCRETE
    n_actions = len(ACTION_FOR_DIRECTION)

    def __post_init__(self):
        if self.aggregate not in AGGREGATES:
            raise InvalidRangeError(f"unknown report aggregate {self.aggregate!r}")

    def act(self, history: GridObservation, sample: KSample) -> int:
        if not self.use_messages or len(sample) == 0:
            return 0
        reports = np.asarray(sample.payloads, dtype=float)
        target = np.rint(AGGREGATES[self.aggregate](reports, axis=0))
        step = np.sign(target - np.asarray(history.position, dtype=float)).astype(int)
        return ACTION_FOR_DIRECTION[(int(step[0]), int(step[1]))]


@dataclass(frozen=True)
class DemandSharePolicy(AblationPolicy):
    """Restock to the mean of the own demand and the k sampled demand reports."""

    ablation_size: int = 1
    products: int = 3
    use_messages: bool = True

    action_kind = ActionKind.CONTINUOUS

    @property
    def action_dim(self) -> int:
        return self.products

    def act(self, history, sample: KSample) -> np.ndarray:
        reports = [np.asarray(history.own_demand, dtype=float)]
        if self.use_messages:
            reports.extend(np.asarray(p, dtype=float) for p in sample.payloads)
        return np.mean(reports, axis=0) - np.asarray(history.inventory, dtype=float)


@dataclass(frozen=True)
class PluralitySymbolPolicy(AblationPolicy):
    """Oracle-mode policy over symbolic messages: the most frequent symbol wins.

    Actions are alphabet positions; ties go to the earliest symbol.
    """

    alphabet: tuple = ("a", "b", "c")
    ablation_size: int = 1

    action_kind = ActionKind.DISCRETE

    @property
    def n_actions(self) -> int:
        return len(self.alphabet)

    def act(self, history, sample: KSample) -> int:
        counts = Counter(self.alphabet.index(p) for p in sample.payloads)
        return min(counts, key=lambda a: (-counts[a], a))


@dataclass(frozen=True)
class MeanPayloadPolicy(AblationPolicy):
    """Oracle-mode continuous policy: the mean of the k payload vectors."""

    ablation_size: int = 1
    dim: int = 1

    action_kind = ActionKind.CONTINUOUS

    @property
    def action_dim(self) -> int:
        return self.dim

    def act(self, history, sample: KSample) -> np.ndarray:
        return np.mean([np.asarray(p, dtype=float).reshape(self.dim) for p in sample.payloads], axis=0)
