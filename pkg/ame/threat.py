"""Attack harness: up to C channels per step are rewritten by a pluggable attacker."""

import itertools
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Callable, Sequence

import numpy as np
from loguru import logger

from .certmath import binomial
from .ensemble import MessageSet
from .errors import BudgetError, DimensionMismatchError, InvalidRangeError, SearchBudgetExceeded

MAX_EXHAUSTIVE_SEARCH = 100_000


class ChannelPolicy(str, Enum):
    FIXED_SET = "fixed_set"
    PER_STEP = "per_step"


@dataclass(frozen=True)
class AttackBudget:
    n_adversaries: int
    channel_policy: ChannelPolicy = ChannelPolicy.PER_STEP
    assume_bounded: bool = True
    fixed_channels: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.n_adversaries < 0:
            raise InvalidRangeError(f"attack budget C={self.n_adversaries} is negative")
        object.__setattr__(self, "channel_policy", ChannelPolicy(self.channel_policy))
        if self.fixed_channels is not None:
            object.__setattr__(self, "fixed_channels", tuple(sorted(int(c) for c in self.fixed_channels)))

    def validate(self, n_channels: int):
        if self.n_adversaries > n_channels:
            raise BudgetError(f"C={self.n_adversaries} exceeds the {n_channels} available channels")
        if 2 * self.n_adversaries >= n_channels:
            if self.assume_bounded:
                raise BudgetError(
                    f"C={self.n_adversaries} of {n_channels} channels is not fewer than half; "
                    "enable stress mode to run it anyway"
                )
            logger.warning("stress mode: C={} of {} channels breaks the bounded-adversary assumption",
                           self.n_adversaries, n_channels)
        if self.fixed_channels is not None:
            if len(self.fixed_channels) > self.n_adversaries or any(
                    not 0 <= c < n_channels for c in self.fixed_channels):
                raise BudgetError(f"fixed channels {self.fixed_channels} do not fit C={self.n_adversaries}")

    def pinned(self, n_channels: int, rng: np.random.Generator) -> "AttackBudget":
        """Fixed-set budgets pick their channels once, at episode start."""
        self.validate(n_channels)
        if self.channel_policy != ChannelPolicy.FIXED_SET or self.fixed_channels is not None:
            return self
        chosen = rng.choice(n_channels, size=self.n_adversaries, replace=False)
        return replace(self, fixed_channels=tuple(int(c) for c in chosen))

    def channels_for_step(self, n_channels: int, rng: np.random.Generator) -> tuple[int, ...]:
        if self.n_adversaries == 0:
            return ()
        if self.channel_policy == ChannelPolicy.FIXED_SET:
            if self.fixed_channels is None:
                raise BudgetError("fixed-set budget used before its channels were pinned")
            return self.fixed_channels
        chosen = rng.choice(n_channels, size=self.n_adversaries, replace=False)
        return tuple(sorted(int(c) for c in chosen))

    def candidate_channels(self, n_channels: int) -> tuple[int, ...]:
        if self.channel_policy == ChannelPolicy.FIXED_SET and self.fixed_channels is not None:
            return self.fixed_channels
        return tuple(range(n_channels))


@dataclass(frozen=True)
class PayloadBox:
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.asarray(self.low, dtype=float)
        high = np.asarray(self.high, dtype=float)
        if low.shape != high.shape or np.any(low > high):
            raise InvalidRangeError(f"bad payload box [{low}, {high}]")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def dim(self) -> int:
        return self.low.shape[0]

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.low, self.high)

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.low, self.high)

    def grid(self, points: int = 3) -> list[np.ndarray]:
        """Evenly spaced grid including every corner of the box."""
        axes = [np.linspace(lo, hi, max(points, 2)) for lo, hi in zip(self.low, self.high)]
        return [np.array(p) for p in itertools.product(*axes)]


@dataclass(frozen=True)
class Alphabet:
    symbols: tuple

    def sample(self, rng: np.random.Generator):
        return self.symbols[int(rng.integers(0, len(self.symbols)))]


@dataclass
class AttackContext:
    """What a look-ahead attacker may inspect: the environment model and victim."""

    env: Any
    defender: Any
    history: Any
    step: int


class Attacker(ABC):
    """Rewrites the payloads of the channels the budget selects this step."""

    def attack(self, msgs: MessageSet, budget: AttackBudget, rng: np.random.Generator,
               context: AttackContext | None = None) -> MessageSet:
        channels = budget.channels_for_step(len(msgs), rng)
        return msgs.with_payloads({c: self.perturb(msgs.messages[c].payload, rng) for c in channels})

    @abstractmethod
    def perturb(self, payload, rng: np.random.Generator):
        ...


def _demand_vector(demand, dim: int | None = None) -> np.ndarray:
    d = np.asarray(demand, dtype=float)
    if d.ndim != 1 or (dim is not None and d.shape[0] != dim):
        raise DimensionMismatchError(f"expected a {dim or 'M'}-dimensional demand vector, got shape {d.shape}")
    return d


def perm_attack(demand, rng: np.random.Generator | None = None, dim: int | None = None) -> np.ndarray:
    d = _demand_vector(demand, dim)
    rng = rng if rng is not None else np.random.default_rng()
    return rng.permutation(d)


def swap_attack(demand, dim: int | None = None) -> np.ndarray:
    """Rank reversal: the r-th smallest value moves to where the r-th largest was."""
    d = _demand_vector(demand, dim)
    order = np.argsort(d, kind="stable")
    out = np.empty_like(d)
    out[order] = d[order[::-1]]
    return out


def flip_attack(demand, dim: int | None = None) -> np.ndarray:
    """Mirror every demand about the mean demand, floored at zero."""
    d = _demand_vector(demand, dim)
    return np.maximum(2.0 * d.mean() - d, 0.0)


class RandomAttacker(Attacker):
    def __init__(self, space: PayloadBox | Alphabet):
        self.space = space

    def perturb(self, payload, rng):
        return self.space.sample(rng)


def random_attack(msgs: MessageSet, budget: AttackBudget, rng: np.random.Generator,
                  space: PayloadBox | Alphabet) -> MessageSet:
    return RandomAttacker(space).attack(msgs, budget, rng)


DEMAND_ATTACKS = {"perm": perm_attack, "swap": swap_attack, "flip": flip_attack}


class DemandAttacker(Attacker):
    def __init__(self, kind: str, dim: int | None = None):
        if kind not in DEMAND_ATTACKS:
            raise InvalidRangeError(f"unknown demand attack {kind!r}")
        self.kind = kind
        self.dim = dim

    def perturb(self, payload, rng):
        if self.kind == "perm":
            return perm_attack(payload, rng, self.dim)
        return DEMAND_ATTACKS[self.kind](payload, self.dim)


class OffsetAttacker(Attacker):
    """Adds a fixed offset to every hijacked payload, clamped to the payload box."""

    def __init__(self, offset, space: PayloadBox | None = None):
        self.offset = np.asarray(offset, dtype=float)
        self.space = space

    def perturb(self, payload, rng):
        shifted = np.asarray(payload, dtype=float) + self.offset
        return self.space.clip(shifted) if self.space is not None else shifted


@dataclass
class AttackSearchResult:
    messages: MessageSet
    value: float
    exhaustive: bool
    evaluated: int


def _rollout_value(env_model, victim, msgs: MessageSet, assignment: dict, horizon: int,
                   history, step: int) -> float:
    env = env_model.clone()
    received = msgs.with_payloads(assignment) if assignment else msgs
    total = 0.0
    for h in range(horizon):
        if env.done:
            break
        if h > 0:
            benign = env.messages()
            received = benign.with_payloads(assignment) if assignment else benign
        result = env.step(victim.decide(history, received, step + h).action)
        total += result.reward
        history = result.observation
    return total


def _search_size(n_channels: int, budget: int, n_candidates: int) -> int:
    return sum(binomial(n_channels, c) * n_candidates ** c for c in range(0, budget + 1))


def search_attack(env_model, victim, msgs: MessageSet, budget: AttackBudget,
                  candidate_payloads: Sequence, horizon: int = 1, history=None, step: int = 0,
                  max_exhaustive: int = MAX_EXHAUSTIVE_SEARCH) -> AttackSearchResult:
    """Perturbation minimising the victim's simulated return over ``horizon`` steps.

    Exhaustive over every channel subset of size <= C and every candidate
    assignment when that grid is small enough, greedy coordinate descent
    otherwise. Ties keep the earliest, smallest perturbation.
    """
    if horizon < 1:
        raise InvalidRangeError(f"search horizon must be >= 1, got {horizon}")
    candidates = list(candidate_payloads)
    channels = budget.candidate_channels(len(msgs))
    limit = min(budget.n_adversaries, len(channels))

    def value(assignment):
        return _rollout_value(env_model, victim, msgs, assignment, horizon, history, step)

    try:
        size = _search_size(len(channels), limit, len(candidates))
        if size > max_exhaustive:
            raise SearchBudgetExceeded(f"{size} perturbations exceed the exhaustive limit {max_exhaustive}")
        best_assignment, best, evaluated = {}, value({}), 1
        for c in range(1, limit + 1):
            for subset in itertools.combinations(channels, c):
                for payloads in itertools.product(candidates, repeat=c):
                    assignment = dict(zip(subset, payloads))
                    v = value(assignment)
                    evaluated += 1
                    if v < best:
                        best, best_assignment = v, assignment
        exhaustive = True
    except SearchBudgetExceeded as e:
        logger.warning("{}; falling back to greedy search", e)
        best_assignment, best, evaluated = {}, value({}), 1
        improved = True
        while improved:
            improved = False
            for channel in channels:
                if channel not in best_assignment and len(best_assignment) >= limit:
                    continue
                for payload in candidates:
                    trial = dict(best_assignment)
                    trial[channel] = payload
                    v = value(trial)
                    evaluated += 1
                    if v < best - 1e-12:
                        best, best_assignment, improved = v, trial, True
        exhaustive = False

    perturbed = msgs.with_payloads(best_assignment) if best_assignment else msgs
    return AttackSearchResult(perturbed, best, exhaustive, evaluated)


def greedy_adaptive_attack(env_model, victim, msgs: MessageSet, budget: AttackBudget,
                           candidate_payloads: Sequence, horizon: int = 1, history=None,
                           step: int = 0) -> MessageSet:
    return search_attack(env_model, victim, msgs, budget, candidate_payloads, horizon, history, step).messages


def simplex_candidates(msgs: MessageSet) -> list[np.ndarray]:
    """Total reported demand piled on one product, for every product."""
    total = float(np.mean([np.sum(p) for p in msgs.payloads]))
    dim = len(np.asarray(msgs.payloads[0]))
    return [np.eye(dim)[i] * total for i in range(dim)]


class GreedyAdaptiveAttacker(Attacker):
    """Look-ahead search attacker.

    Seed-blind by default: a partial-ensemble victim is simulated with the
    attacker's own guess of the sampling seed rather than the real one.
    """

    def __init__(self, candidates: Sequence | Callable[[MessageSet], Sequence], horizon: int = 1,
                 seed_aware: bool = False, guess_seed: int = 0,
                 max_exhaustive: int = MAX_EXHAUSTIVE_SEARCH):
        self.candidates = candidates
        self.horizon = horizon
        self.seed_aware = seed_aware
        self.guess_seed = guess_seed
        self.max_exhaustive = max_exhaustive

    def attack(self, msgs, budget, rng, context=None):
        if context is None:
            raise InvalidRangeError("adaptive attacker needs the environment model and victim")
        victim = context.defender
        if not self.seed_aware and hasattr(victim, "with_seed"):
            victim = victim.with_seed(self.guess_seed)
        candidates = self.candidates(msgs) if callable(self.candidates) else self.candidates
        result = search_attack(context.env, victim, msgs, budget, candidates, self.horizon,
                               context.history, context.step, self.max_exhaustive)
        logger.debug("adaptive attack step {}: value {:.3f} after {} rollouts (exhaustive={})",
                     context.step, result.value, result.evaluated, result.exhaustive)
        return result.messages

    def perturb(self, payload, rng):
        raise NotImplementedError("adaptive attacker searches whole perturbations")
