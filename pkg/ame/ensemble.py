"""Message-ensemble decision layer.

A base ``AblationPolicy`` only ever sees k of the N-1 received messages. The
ensemble evaluates it on every k-sample (or on D random ones) and aggregates by
majority vote for discrete actions and by coordinate-wise median for continuous
ones.
"""

import concurrent.futures
import itertools
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass, field, is_dataclass, replace
from typing import Any, Sequence

import numpy as np
from loguru import logger

from .certmath import MAX_EXHAUSTIVE_AGENTS, ActionKind, EnsembleConfig, binomial
from .errors import DimensionMismatchError, EnumerationBudgetExceeded, InvalidRangeError, PolicyAsymmetryError

Action = int | np.ndarray


def _same_payload(a, b) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        a, b = np.asarray(a), np.asarray(b)
        return a.shape == b.shape and bool(np.array_equal(a, b))
    return a == b


@dataclass(frozen=True)
class Message:
    payload: Any
    channel_id: int


@dataclass(frozen=True)
class MessageSet:
    """The N-1 messages a victim receives at one step.

    ``tamper_mask`` is harness ground truth and is never handed to a policy.
    """

    messages: tuple[Message, ...]
    tamper_mask: tuple[bool, ...] = ()

    def __post_init__(self):
        messages = tuple(self.messages)
        mask = tuple(bool(m) for m in self.tamper_mask) or (False,) * len(messages)
        if len(mask) != len(messages):
            raise DimensionMismatchError(
                f"tamper mask has {len(mask)} entries for {len(messages)} messages"
            )
        object.__setattr__(self, "messages", messages)
        object.__setattr__(self, "tamper_mask", mask)

    @classmethod
    def from_payloads(cls, payloads: Sequence[Any], tamper_mask: Sequence[bool] = ()) -> "MessageSet":
        return cls(tuple(Message(p, i) for i, p in enumerate(payloads)), tuple(tamper_mask))

    def __len__(self) -> int:
        return len(self.messages)

    @property
    def payloads(self) -> list:
        return [m.payload for m in self.messages]

    @property
    def tampered_channels(self) -> tuple[int, ...]:
        return tuple(i for i, hit in enumerate(self.tamper_mask) if hit)

    def with_payloads(self, replacements: dict[int, Any]) -> "MessageSet":
        """Copy with the given channels rewritten.

        A channel is marked as tampered only when its payload actually changed,
        so the mask always names exactly the channels that differ.
        """
        payloads = self.payloads
        mask = list(self.tamper_mask)
        for channel, payload in replacements.items():
            if not _same_payload(payloads[channel], payload):
                mask[channel] = True
            payloads[channel] = payload
        return MessageSet.from_payloads(payloads, mask)

    def permuted(self, order: Sequence[int]) -> "MessageSet":
        """Channel ``i`` of the result carries channel ``order[i]`` of this set."""
        return MessageSet.from_payloads(
            [self.messages[j].payload for j in order],
            [self.tamper_mask[j] for j in order],
        )


@dataclass(frozen=True)
class KSample:
    indices: tuple[int, ...]
    payloads: tuple[Any, ...]

    @classmethod
    def from_indices(cls, msgs: MessageSet, indices: Sequence[int]) -> "KSample":
        ordered = tuple(sorted(indices))
        return cls(ordered, tuple(msgs.messages[i].payload for i in ordered))

    def __len__(self) -> int:
        return len(self.indices)

    def touches(self, channels) -> bool:
        return any(i in channels for i in self.indices)


class AblationPolicy(ABC):
    """Deterministic base policy over one interaction history and one k-sample.

    Implementations must be symmetric in the k messages and safe to call from
    several threads at once.
    """

    action_kind: ActionKind = ActionKind.DISCRETE
    ablation_size: int = 1
    n_actions: int | None = None
    action_dim: int | None = None

    @abstractmethod
    def act(self, history: Any, sample: KSample) -> Action:
        ...

    def with_ablation_size(self, k: int) -> "AblationPolicy":
        """Copy acting on k-samples of size ``k``.

        Dataclass policies get this for free; any other implementation must
        override it.
        """
        if not is_dataclass(self):
            raise NotImplementedError(
                f"{type(self).__name__} is not a dataclass and must override with_ablation_size"
            )
        return replace(self, ablation_size=k)


def unrank_combination(rank: int, n: int, k: int) -> tuple[int, ...]:
    """The ``rank``-th k-subset of range(n) in lexicographic order."""
    total = binomial(n, k)
    if not 0 <= rank < total:
        raise InvalidRangeError(f"rank {rank} outside [0, {total})")
    chosen = []
    x = 0
    for i in range(k):
        while True:
            block = binomial(n - 1 - x, k - 1 - i)
            if rank < block:
                break
            rank -= block
            x += 1
        chosen.append(x)
        x += 1
    return tuple(chosen)


def enumerate_k_samples(msgs: MessageSet, k: int) -> list[KSample]:
    n = len(msgs)
    if n + 1 > MAX_EXHAUSTIVE_AGENTS:
        raise EnumerationBudgetExceeded(
            f"full enumeration is capped at {MAX_EXHAUSTIVE_AGENTS} agents, got {n + 1}"
        )
    if not 1 <= k <= n:
        raise InvalidRangeError(f"ablation size k={k} outside [1, {n}]")
    return [KSample.from_indices(msgs, combo) for combo in itertools.combinations(range(n), k)]


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


_INT64_MAX = int(np.iinfo(np.int64).max)


def uniform_int(low: int, high: int, rng: np.random.Generator) -> int:
    """Uniform integer in [low, high), exact for bounds beyond int64."""
    if high <= _INT64_MAX:
        return int(rng.integers(low, high))
    span = high - low
    bits = span.bit_length()
    nbytes = (bits + 7) // 8
    while True:
        value = int.from_bytes(rng.bytes(nbytes), "big") >> (8 * nbytes - bits)
        if value < span:
            return low + value


def draw_ranks(total: int, count: int, rng: np.random.Generator) -> list[int]:
    """``count`` distinct ranks from range(total), uniformly without replacement."""
    # sparse partial Fisher-Yates
    swapped: dict[int, int] = {}
    ranks = []
    for i in range(count):
        j = uniform_int(i, total, rng)
        ranks.append(swapped.get(j, j))
        swapped[j] = swapped.get(i, i)
    return ranks


def sample_k_samples(msgs: MessageSet, k: int, sample_size: int, seed) -> list[KSample]:
    """D distinct k-samples drawn uniformly without replacement."""
    n = len(msgs)
    if not 1 <= k <= n:
        raise InvalidRangeError(f"ablation size k={k} outside [1, {n}]")
    total = binomial(n, k)
    if not 1 <= sample_size <= total:
        raise InvalidRangeError(f"sample size D={sample_size} outside [1, {total}]")
    rng = _as_rng(seed)
    return [
        KSample.from_indices(msgs, unrank_combination(rank, n, k))
        for rank in draw_ranks(total, sample_size, rng)
    ]


def _same_action(a, b) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    return a == b


def _check_symmetry(policy: AblationPolicy, history, sample: KSample, action):
    if len(sample) < 2:
        return
    flipped = KSample(tuple(reversed(sample.indices)), tuple(reversed(sample.payloads)))
    if not _same_action(policy.act(history, flipped), action):
        raise PolicyAsymmetryError(
            f"{type(policy).__name__} is not symmetric in its messages on sample {sample.indices}"
        )


def evaluate_samples(policy: AblationPolicy, history, samples: list[KSample],
                     workers: int | None = None) -> list[Action]:
    """Base actions in sample order, sequentially or on a thread pool."""
    if workers and workers > 1 and len(samples) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
            actions = list(executor.map(lambda s: policy.act(history, s), samples))
    else:
        actions = [policy.act(history, s) for s in samples]
    if __debug__ and samples:
        _check_symmetry(policy, history, samples[0], actions[0])
    return actions


def majority_vote(actions: Sequence[int]) -> tuple[int, dict[int, int]]:
    """Most voted action (lowest id on ties) and the vote table."""
    votes = Counter(int(a) for a in actions)
    table = dict(sorted(votes.items()))
    winner = min(table, key=lambda a: (-table[a], a))
    return winner, table


def coordinate_median(actions: Sequence[np.ndarray], dim: int | None = None) -> np.ndarray:
    """Element-wise median; even counts average the two middle order statistics."""
    stacked = np.asarray([np.asarray(a, dtype=float) for a in actions])
    if stacked.ndim != 2:
        raise DimensionMismatchError("continuous base actions must be equal-length vectors")
    if dim is not None and stacked.shape[1] != dim:
        raise DimensionMismatchError(f"expected action dimension {dim}, got {stacked.shape[1]}")
    return np.median(stacked, axis=0)


@dataclass
class EnsembleDecision:
    action: Action
    votes: dict[int, int] | None
    samples: list[KSample] = field(repr=False)
    base_actions: list[Action] = field(repr=False)
    full: bool = True

    @property
    def u_max(self) -> int:
        return max(self.votes.values()) if self.votes else 0


def _decide(policy: AblationPolicy, history, samples: list[KSample], full: bool,
            workers: int | None = None) -> EnsembleDecision:
    actions = evaluate_samples(policy, history, samples, workers)
    if policy.action_kind == ActionKind.DISCRETE:
        winner, votes = majority_vote(actions)
        return EnsembleDecision(winner, votes, samples, actions, full)
    return EnsembleDecision(coordinate_median(actions, policy.action_dim), None, samples, actions, full)


def ensemble_act_discrete(policy: AblationPolicy, history, msgs: MessageSet,
                          workers: int | None = None) -> tuple[int, dict[int, int]]:
    if policy.action_kind != ActionKind.DISCRETE:
        raise InvalidRangeError("majority vote needs a discrete-action policy")
    decision = _decide(policy, history, enumerate_k_samples(msgs, policy.ablation_size), True, workers)
    return decision.action, decision.votes


def ensemble_act_continuous(policy: AblationPolicy, history, msgs: MessageSet,
                            workers: int | None = None) -> np.ndarray:
    if policy.action_kind != ActionKind.CONTINUOUS:
        raise InvalidRangeError("coordinate median needs a continuous-action policy")
    return _decide(policy, history, enumerate_k_samples(msgs, policy.ablation_size), True, workers).action


def ensemble_act_partial(policy: AblationPolicy, history, msgs: MessageSet, sample_size: int,
                         seed, workers: int | None = None) -> tuple[Action, dict[int, int] | None]:
    """D-ensemble: aggregate over D random k-samples instead of all of them."""
    k = policy.ablation_size
    full = sample_size == binomial(len(msgs), k)
    samples = (enumerate_k_samples(msgs, k) if full
               else sample_k_samples(msgs, k, sample_size, seed))
    decision = _decide(policy, history, samples, full, workers)
    return decision.action, decision.votes


@dataclass
class EnsembleDefender:
    """A victim agent running the (full or D-) message ensemble."""

    policy: AblationPolicy
    config: EnsembleConfig
    seed: int = 0
    workers: int | None = None

    def __post_init__(self):
        if self.policy.ablation_size != self.config.ablation_size:
            self.policy = self.policy.with_ablation_size(self.config.ablation_size)
        if self.policy.action_kind != self.config.action_kind:
            raise InvalidRangeError(
                f"policy acts {self.policy.action_kind.value}, config says {self.config.action_kind.value}"
            )

    def step_rng(self, step: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, step])

    def samples_for(self, msgs: MessageSet, step: int) -> list[KSample]:
        if len(msgs) != self.config.n_channels:
            raise DimensionMismatchError(
                f"defender expects {self.config.n_channels} channels, got {len(msgs)}"
            )
        if self.config.is_full:
            return enumerate_k_samples(msgs, self.config.ablation_size)
        return sample_k_samples(msgs, self.config.ablation_size, self.config.sample_size, self.step_rng(step))

    def decide(self, history, msgs: MessageSet, step: int = 0) -> EnsembleDecision:
        decision = _decide(self.policy, history, self.samples_for(msgs, step), self.config.is_full, self.workers)
        logger.debug("step {} ensemble action {} votes {}", step, decision.action, decision.votes)
        return decision

    def with_seed(self, seed: int) -> "EnsembleDefender":
        return replace(self, seed=seed)
