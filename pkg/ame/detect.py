"""Action-bias scoring of channels, and re-certification after filtering suspects."""

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .certmath import ActionKind, EnsembleConfig, max_certifiable_k
from .ensemble import AblationPolicy, KSample, MessageSet
from .envs.rollout import EpisodeSeeds, StepRecord, run_episode
from .errors import InvalidRangeError

DEFAULT_WINDOW = 20
SCORE_COLUMNS = ["channel", "beta", "episodes"]


@dataclass(frozen=True)
class BiasScore:
    channel_id: int
    beta: float
    episodes_averaged: int = 1

    def row(self) -> dict:
        return {"channel": self.channel_id, "beta": self.beta, "episodes": self.episodes_averaged}


def _action_vector(policy: AblationPolicy, action) -> np.ndarray:
    if policy.action_kind == ActionKind.DISCRETE:
        return np.eye(policy.n_actions)[int(action)]
    return np.asarray(action, dtype=float)


def action_bias(policy_k1: AblationPolicy, history, msgs: MessageSet) -> list[BiasScore]:
    """L1 distance between each channel's single-message action and the median action."""
    if len(msgs) < 3:
        raise InvalidRangeError(f"action bias needs at least 3 channels, got {len(msgs)}")
    if policy_k1.ablation_size != 1:
        policy_k1 = policy_k1.with_ablation_size(1)
    vectors = np.asarray([
        _action_vector(policy_k1, policy_k1.act(history, KSample((j,), (m.payload,))))
        for j, m in enumerate(msgs.messages)
    ])
    median = np.median(vectors, axis=0)
    return [BiasScore(j, float(np.abs(v - median).sum())) for j, v in enumerate(vectors)]


def average_bias(batches: Sequence[Sequence[BiasScore]], episodes: int = 1) -> list[BiasScore]:
    if not batches:
        return []
    betas = np.asarray([[s.beta for s in batch] for batch in batches])
    return [BiasScore(j, float(b), episodes) for j, b in enumerate(betas.mean(axis=0))]


def flag_and_recertify(scores: Sequence[BiasScore], c: int,
                       config: EnsembleConfig) -> tuple[tuple[int, ...], int | None]:
    """Flag the top-c channels and solve for k over the messages that remain."""
    if not 0 <= c <= len(scores):
        raise InvalidRangeError(f"cannot flag {c} of {len(scores)} channels")
    ranked = sorted(scores, key=lambda s: (-s.beta, s.channel_id))
    flagged = tuple(sorted(s.channel_id for s in ranked[:c]))
    remaining_agents = config.n_agents - c
    if remaining_agents < 2:
        return flagged, None
    return flagged, max_certifiable_k(remaining_agents, max(config.n_adversaries - c, 0))


def collect_action_bias(env_factory: Callable, defender, policy_k1: AblationPolicy, attacker=None,
                        budget=None, episodes: int = DEFAULT_WINDOW,
                        seeds: EpisodeSeeds = EpisodeSeeds()) -> list[BiasScore]:
    """Average action bias per channel over an episode window.

    Each episode contributes the mean of its per-step biases, computed on the
    messages the victim actually received.
    """
    per_episode = []
    for e in range(episodes):
        steps: list[list[BiasScore]] = []

        def score(record: StepRecord):
            steps.append(action_bias(policy_k1, record.observation, record.received))

        run_episode(env_factory(), defender, attacker, budget, seeds.offset(e), certify=False, on_step=score)
        per_episode.append(average_bias(steps))
    return average_bias(per_episode, episodes)
