"""Episode loop: observe, receive messages, (attack), act, certify."""

import concurrent.futures
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
import pandas as pd
from loguru import logger

from ..certify import CertificateReport, certify_step
from ..ensemble import AblationPolicy, EnsembleDefender, MessageSet, enumerate_k_samples, evaluate_samples
from ..errors import ConfigError, EnumerationBudgetExceeded
from ..threat import AttackBudget, AttackContext, Attacker
from .base import Environment

DEFAULT_GAMMA = 0.99
MAX_EXHAUSTIVE_HORIZON = 6


@dataclass(frozen=True)
class EpisodeSeeds:
    env: int = 0
    attack: int = 1
    ensemble: int = 2

    def offset(self, i: int) -> "EpisodeSeeds":
        return EpisodeSeeds(self.env + i, self.attack + i, self.ensemble + i)


@dataclass
class StepRecord:
    step: int
    observation: Any
    benign: MessageSet
    received: MessageSet
    action: Any
    reward: float
    votes: dict | None = None
    report: CertificateReport | None = None
    state: Environment | None = field(default=None, repr=False)


def _format_action(action) -> str:
    if isinstance(action, np.ndarray):
        return " ".join(f"{x:.6g}" for x in action)
    return str(action)


@dataclass
class Trajectory:
    records: list[StepRecord]
    gamma: float = DEFAULT_GAMMA

    def __len__(self) -> int:
        return len(self.records)

    @property
    def rewards(self) -> list[float]:
        return [r.reward for r in self.records]

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))

    def discounted_return(self, gamma: float | None = None) -> float:
        g = self.gamma if gamma is None else gamma
        return float(sum(g ** t * r for t, r in enumerate(self.rewards)))

    @property
    def reports(self) -> list[CertificateReport]:
        return [r.report for r in self.records if r.report is not None]

    @property
    def all_certified(self) -> bool:
        return bool(self.records) and all(r.report is not None and r.report.certified for r in self.records)

    @property
    def certified_fraction(self) -> float:
        if not self.records:
            return 0.0
        return sum(1 for r in self.records if r.report is not None and r.report.certified) / len(self.records)

    def to_frame(self) -> pd.DataFrame:
        """One row per step: index, action, reward, tamper mask, verdict."""
        return pd.DataFrame(
            [
                {
                    "step": r.step,
                    "action": _format_action(r.action),
                    "reward": r.reward,
                    "tamper_mask": "".join("1" if m else "0" for m in r.received.tamper_mask),
                    "verdict": r.report.verdict.value if r.report is not None else "",
                }
                for r in self.records
            ],
            columns=["step", "action", "reward", "tamper_mask", "verdict"],
        )


def run_episode(env: Environment, defender: EnsembleDefender, attacker: Attacker | None = None,
                budget: AttackBudget | None = None, seeds: EpisodeSeeds = EpisodeSeeds(),
                gamma: float = DEFAULT_GAMMA, certify: bool = True, record_states: bool = False,
                on_step: Callable[[StepRecord], None] | None = None) -> Trajectory:
    """Play one episode of the victim against an optional attacker.

    The env, attack and ensemble seeds fully determine the trajectory.
    """
    if env.n_agents != defender.config.n_agents:
        raise ConfigError(f"environment has N={env.n_agents}, defender expects N={defender.config.n_agents}")
    if env.action_kind != defender.config.action_kind:
        raise ConfigError(f"environment acts {env.action_kind.value}, defender {defender.config.action_kind.value}")
    if attacker is not None and budget is None:
        raise ConfigError("an attacker needs an attack budget")

    observation = env.reset(seeds.env)
    defender = defender.with_seed(seeds.ensemble)
    attack_rng = np.random.default_rng(seeds.attack)
    if attacker is not None:
        budget = budget.pinned(env.n_agents - 1, attack_rng)

    records = []
    while not env.done:
        step = env.t
        benign = env.messages()
        state = env.clone() if record_states else None
        received = benign
        if attacker is not None:
            context = AttackContext(env, defender, observation, step)
            received = attacker.attack(benign, budget, attack_rng, context)
        decision = defender.decide(observation, received, step)
        report = certify_step(step, defender, observation, received, decision) if certify else None
        result = env.step(decision.action)
        record = StepRecord(step, observation, benign, received, decision.action, result.reward,
                            decision.votes, report, state)
        records.append(record)
        if on_step is not None:
            on_step(record)
        observation = result.observation
    return Trajectory(records, gamma)


def run_batch(jobs: Sequence[Callable[[], Any]], workers: int | None = None) -> list:
    """Run independent episode jobs, returning results in job order."""
    if not workers or workers <= 1:
        return [job() for job in jobs]
    results = [None] * len(jobs)
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(job): i for i, job in enumerate(jobs)}
        for future in concurrent.futures.as_completed(futures):
            results[futures[future]] = future.result()
    return results


def clean_ablation_returns(env_factory: Callable[[], Environment], defender: EnsembleDefender,
                           streams: int = 1000, first_seed: int = 0, env_seed: int = 0,
                           gamma: float = DEFAULT_GAMMA, workers: int | None = None) -> list[float]:
    """Discounted returns of the bare ablation policy (one random k-sample per step).

    Each stream is a different ensemble seed on the same clean environment.
    """
    single = EnsembleDefender(defender.policy, defender.config.with_changes(sample_size=1))

    def job(stream):
        return lambda: run_episode(
            env_factory(), single, seeds=EpisodeSeeds(env=env_seed, ensemble=first_seed + stream),
            gamma=gamma, certify=False,
        ).discounted_return()

    return run_batch([job(s) for s in range(streams)], workers)


def min_clean_ablation_return_exhaustive(env: Environment, policy: AblationPolicy,
                                         gamma: float = DEFAULT_GAMMA,
                                         max_horizon: int = MAX_EXHAUSTIVE_HORIZON) -> float:
    """Exact minimum over every k-sample stream of a reset, clean episode.

    Streams that pick samples with the same base action lead to the same
    state, so the search only branches on distinct actions.
    """
    if env.horizon - env.t > max_horizon:
        raise EnumerationBudgetExceeded(
            f"exhaustive ablation streams need horizon <= {max_horizon}, got {env.horizon - env.t}"
        )

    def search(node: Environment, history, depth: int, acc: float) -> float:
        if node.done:
            return acc
        samples = enumerate_k_samples(node.messages(), policy.ablation_size)
        actions = sorted(set(int(a) for a in evaluate_samples(policy, history, samples)))
        best = math.inf
        for action in actions:
            child = node.clone()
            result = child.step(action)
            best = min(best, search(child, result.observation, depth + 1, acc + gamma ** depth * result.reward))
        return best

    value = search(env, env.observation(), env.t, 0.0)
    logger.debug("exhaustive clean ablation minimum {:.4f}", value)
    return value
