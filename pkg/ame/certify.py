"""Certificate evaluation and brute-force verification of the ensemble guarantees."""

import concurrent.futures
import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from typing import Any, Sequence

import numpy as np
from loguru import logger

from .certmath import (
    MAX_EXHAUSTIVE_AGENTS,
    ActionKind,
    EnsembleConfig,
    binomial,
    partial_sample_prob_continuous,
    partial_sample_prob_discrete,
    sample_counts,
)
from .ensemble import (
    AblationPolicy,
    EnsembleDecision,
    EnsembleDefender,
    MessageSet,
    coordinate_median,
    enumerate_k_samples,
    evaluate_samples,
    majority_vote,
    sample_k_samples,
)
from .errors import EmptyInputError, EnumerationBudgetExceeded, InvalidRangeError

MAX_ORACLE_CASES = 1_000_000
MAX_SUBSET_BITS = 20
ATOL = 1e-9


@dataclass(frozen=True)
class BenignActionSet:
    """Actions the base policy takes on purely benign k-samples.

    Discrete: the set itself. Continuous: the coordinate-wise envelope
    [low, high]; both bounds are None when no purely benign sample exists.
    """

    kind: ActionKind
    actions: frozenset = frozenset()
    low: np.ndarray | None = None
    high: np.ndarray | None = None

    @classmethod
    def from_actions(cls, kind: ActionKind, actions: Sequence) -> "BenignActionSet":
        if kind == ActionKind.DISCRETE:
            return cls(kind, frozenset(int(a) for a in actions))
        if not actions:
            return cls(kind)
        stacked = np.asarray([np.asarray(a, dtype=float) for a in actions])
        return cls(kind, low=stacked.min(axis=0), high=stacked.max(axis=0))

    @property
    def empty(self) -> bool:
        if self.kind == ActionKind.DISCRETE:
            return not self.actions
        return self.low is None

    def contains(self, action, atol: float = ATOL) -> bool:
        if self.empty:
            return False
        if self.kind == ActionKind.DISCRETE:
            return int(action) in self.actions
        a = np.asarray(action, dtype=float)
        return bool(np.all(a >= self.low - atol) and np.all(a <= self.high + atol))

    def describe(self) -> str:
        if self.kind == ActionKind.DISCRETE:
            return "{" + ",".join(str(a) for a in sorted(self.actions)) + "}"
        if self.empty:
            return "[]"
        return ";".join(f"[{lo:.6g},{hi:.6g}]" for lo, hi in zip(self.low, self.high))


def benign_action_set(policy: AblationPolicy, history, msgs: MessageSet,
                      adversarial_channels: Sequence[int] | None = None,
                      workers: int | None = None) -> BenignActionSet:
    """A_benign over the k-samples that avoid every adversarial channel.

    Without explicit channels the message set's tamper mask is used; a
    tamper-free set therefore contributes all C(N-1, k) samples.
    """
    channels = set(msgs.tampered_channels if adversarial_channels is None else adversarial_channels)
    samples = [s for s in enumerate_k_samples(msgs, policy.ablation_size) if not s.touches(channels)]
    actions = evaluate_samples(policy, history, samples, workers) if samples else []
    return BenignActionSet.from_actions(policy.action_kind, actions)


def check_conditions(config: EnsembleConfig, votes: dict | None = None) -> tuple[bool, bool]:
    """(confident consensus, dominating benign sample) in exact integers.

    Without a vote table (continuous actions) the consensus condition is False.
    """
    condition2 = 2 * config.n2 > config.n1
    condition1 = bool(votes) and max(votes.values()) > config.u_adv
    return condition1, condition2


class Verdict(str, Enum):
    CERTIFIED = "certified-benign"
    UNCERTIFIED = "uncertified"


REPORT_COLUMNS = ["step", "u_max", "u_adv", "cond1", "cond2", "verdict"]


@dataclass
class CertificateReport:
    step: int
    u_max: int
    u_adv: int
    condition1_holds: bool
    condition2_holds: bool
    verdict: Verdict
    benign_set: BenignActionSet
    chosen_action: Any

    @property
    def certified(self) -> bool:
        return self.verdict == Verdict.CERTIFIED

    @property
    def consistent(self) -> bool:
        """A certified verdict must come with an action inside the benign set."""
        return not self.certified or self.benign_set.contains(self.chosen_action)

    def row(self) -> dict:
        return {
            "step": self.step,
            "u_max": self.u_max,
            "u_adv": self.u_adv,
            "cond1": int(self.condition1_holds),
            "cond2": int(self.condition2_holds),
            "verdict": self.verdict.value,
        }


def certify_step(step: int, defender: EnsembleDefender, history, msgs: MessageSet,
                 decision: EnsembleDecision) -> CertificateReport:
    """Certificate for one ensemble decision, judged against the ground-truth mask.

    Discrete steps are certified by the consensus condition (for D-ensembles
    the top count over D votes must still exceed u_adv); continuous steps only
    by the dominating benign condition on the full ensemble.
    """
    config = defender.config
    tampered = set(msgs.tampered_channels)
    if decision.full:
        benign_actions = [a for s, a in zip(decision.samples, decision.base_actions) if not s.touches(tampered)]
        benign_set = BenignActionSet.from_actions(config.action_kind, benign_actions)
    else:
        benign_set = benign_action_set(defender.policy, history, msgs, tampered)
    condition1, condition2 = check_conditions(config, decision.votes)
    if config.action_kind == ActionKind.DISCRETE:
        certified = condition1
    else:
        certified = condition2 and decision.full
    if len(tampered) > config.n_adversaries:
        certified = False
    report = CertificateReport(
        step=step,
        u_max=decision.u_max,
        u_adv=config.u_adv,
        condition1_holds=condition1,
        condition2_holds=condition2,
        verdict=Verdict.CERTIFIED if certified else Verdict.UNCERTIFIED,
        benign_set=benign_set,
        chosen_action=decision.action,
    )
    if not report.consistent:
        logger.warning("step {}: certified action {} outside benign set {}",
                       step, decision.action, benign_set.describe())
    return report


@dataclass(frozen=True)
class Violation:
    channels: tuple[int, ...]
    payloads: tuple
    action: Any
    benign_set: str
    condition_held: bool

    def row(self) -> dict:
        return {
            "channels": " ".join(map(str, self.channels)),
            "payloads": " ".join(str(np.round(p, 6).tolist() if isinstance(p, np.ndarray) else p)
                                 for p in self.payloads),
            "action": np.round(self.action, 6).tolist() if isinstance(self.action, np.ndarray) else self.action,
            "benign_set": self.benign_set,
            "condition_held": int(self.condition_held),
        }


def _oracle_subset(defender: EnsembleDefender, history, benign_msgs: MessageSet, subset: tuple,
                   alphabet: Sequence, conditional: bool) -> list[Violation]:
    policy = defender.policy
    benign_set = benign_action_set(policy, history, benign_msgs, subset)
    violations = []
    for payloads in itertools.product(alphabet, repeat=len(subset)):
        attacked = benign_msgs.with_payloads(dict(zip(subset, payloads)))
        decision = defender.decide(history, attacked)
        condition1, condition2 = check_conditions(defender.config, decision.votes)
        held = condition1 if defender.config.action_kind == ActionKind.DISCRETE else condition2
        if (held or not conditional) and not benign_set.contains(decision.action):
            violations.append(Violation(subset, tuple(payloads), decision.action, benign_set.describe(), held))
    return violations


def oracle_verify_action_certificate(policy: AblationPolicy, history, benign_msgs: MessageSet,
                                     config: EnsembleConfig, alphabet: Sequence,
                                     conditional: bool = True, workers: int | None = None,
                                     max_cases: int = MAX_ORACLE_CASES) -> list[Violation]:
    """Every C-subset of channels times every alphabet assignment, checked by brute force.

    With ``conditional`` a case only counts when the relevant condition holds
    for it (consensus for discrete, dominating benign sample for continuous);
    otherwise every escape from A_benign is recorded, which is how a broken
    configuration exhibits its counterexamples.
    """
    if config.n_agents > MAX_EXHAUSTIVE_AGENTS:
        raise EnumerationBudgetExceeded(
            f"the oracle enumerates at most {MAX_EXHAUSTIVE_AGENTS} agents, got N={config.n_agents}"
        )
    n_channels = len(benign_msgs)
    c = config.n_adversaries
    cases = binomial(n_channels, c) * len(alphabet) ** c
    if cases > max_cases:
        raise EnumerationBudgetExceeded(f"{cases} attack cases exceed the oracle limit {max_cases}")
    defender = EnsembleDefender(policy, config.with_changes(sample_size=config.n1))
    subsets = list(itertools.combinations(range(n_channels), c))

    def run(subset):
        return _oracle_subset(defender, history, benign_msgs, subset, alphabet, conditional)

    if workers and workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
            batches = list(executor.map(run, subsets))
    else:
        batches = [run(s) for s in subsets]
    violations = [v for batch in batches for v in batch]
    logger.debug("oracle checked {} cases for N={} C={} k={}: {} violations",
                 cases, config.n_agents, c, config.ablation_size, len(violations))
    return violations


@lru_cache(maxsize=128)
def contamination_counts(n1: int, contaminated: int) -> tuple[tuple[int, ...], ...]:
    """``counts[d][j]``: subsets of range(n1) with d members, j of them below ``contaminated``.

    Walks every bitmask over the n1 k-samples.
    """
    if n1 > MAX_SUBSET_BITS:
        raise EnumerationBudgetExceeded(f"2^{n1} sample subsets exceed the enumeration limit 2^{MAX_SUBSET_BITS}")
    if not 0 <= contaminated <= n1:
        raise InvalidRangeError(f"contaminated count {contaminated} outside [0, {n1}]")
    masks = np.arange(1 << n1, dtype=np.int64)
    sizes = np.zeros_like(masks)
    hits = np.zeros_like(masks)
    for bit in range(n1):
        member = (masks >> bit) & 1
        sizes += member
        if bit < contaminated:
            hits += member
    table = np.bincount(sizes * (n1 + 1) + hits, minlength=(n1 + 1) ** 2).reshape(n1 + 1, n1 + 1)
    return tuple(tuple(int(x) for x in row) for row in table)


def exhaustive_partial_probability(n_agents: int, n_adversaries: int, k: int, sample_size: int,
                                   u_max: int | None = None) -> Fraction:
    """Fraction of all D-subsets of k-samples that satisfy the certifying event.

    Continuous (no ``u_max``): purely benign samples are more than D/2.
    Discrete: at most u_max - 1 contaminated samples were drawn.
    """
    n1, n2 = sample_counts(n_agents, n_adversaries, k)
    if not 1 <= sample_size <= n1:
        raise InvalidRangeError(f"sample size D={sample_size} outside [1, {n1}]")
    row = contamination_counts(n1, n1 - n2)[sample_size]
    if u_max is None:
        hits = sum(count for j, count in enumerate(row) if 2 * (sample_size - j) > sample_size)
    else:
        hits = sum(row[:max(u_max, 0)])
    return Fraction(hits, sum(row))


@dataclass
class PartialFrequency:
    """Monte Carlo tallies of a D-ensemble under one fixed attack.

    ``events`` counts seeds where the certifying event occurred, ``benign_actions``
    seeds whose aggregated action stayed in A_benign, and
    ``implication_failures`` seeds where the event held for that seed's own
    vote table and the action still escaped.
    """

    seeds: int
    probability: float
    events: int
    benign_actions: int
    u_max: int | None = None
    implication_failures: int = 0

    @property
    def event_rate(self) -> float:
        return self.events / self.seeds

    @property
    def benign_rate(self) -> float:
        return self.benign_actions / self.seeds

    @property
    def standard_error(self) -> float:
        return math.sqrt(self.probability * (1.0 - self.probability) / self.seeds)

    def within(self, sigmas: float = 3.0) -> bool:
        return abs(self.event_rate - self.probability) <= sigmas * self.standard_error + 1e-12

    def benign_at_least(self, sigmas: float = 3.0) -> bool:
        return self.benign_rate >= self.probability - sigmas * self.standard_error - 1e-12


def partial_sample_frequency(defender: EnsembleDefender, history, attacked_msgs: MessageSet,
                             seeds: int, first_seed: int = 0,
                             adversarial_channels: Sequence[int] | None = None) -> PartialFrequency:
    """Run the D-ensemble under ``attacked_msgs`` for many seeds and tally the certificate.

    Discrete: every seed's vote table gives its own top count u. A seed that
    drew at most u - 1 contaminated samples must land in A_benign. The
    reference u_max for the closed form is the smallest top count seen, so
    the event rate tracks p_D(u_max) and the benign rate can only be higher.

    Continuous: a seed with a strict majority of purely benign samples must
    land inside the benign envelope, and the rate of such seeds tracks the
    continuous p_D.

    ``adversarial_channels`` defaults to the tamper mask; pass the controlled
    channels explicitly when an attacker may have sent a benign-looking payload.
    """
    if seeds < 1:
        raise InvalidRangeError(f"need at least one seed, got {seeds}")
    config = defender.config
    tampered = set(attacked_msgs.tampered_channels if adversarial_channels is None else adversarial_channels)
    benign_set = benign_action_set(defender.policy, history, attacked_msgs, tampered)
    d = config.sample_size
    discrete = config.action_kind == ActionKind.DISCRETE
    runs = []
    for seed in range(first_seed, first_seed + seeds):
        samples = sample_k_samples(attacked_msgs, config.ablation_size, d, np.random.default_rng(seed))
        contaminated = sum(1 for s in samples if s.touches(tampered))
        actions = evaluate_samples(defender.policy, history, samples)
        if discrete:
            action, votes = majority_vote(actions)
            top = max(votes.values())
        else:
            action = coordinate_median(actions, defender.policy.action_dim)
            top = None
        runs.append((contaminated, top, benign_set.contains(action)))

    benign_hits = sum(ok for _, _, ok in runs)
    if discrete:
        u_ref = min(top for _, top, _ in runs)
        probability = partial_sample_prob_discrete(config.n_agents, config.n_adversaries,
                                                   config.ablation_size, d, u_ref)
        events = sum(contaminated <= u_ref - 1 for contaminated, _, _ in runs)
        failures = sum(contaminated <= top - 1 and not ok for contaminated, top, ok in runs)
    else:
        u_ref = None
        probability = partial_sample_prob_continuous(config.n_agents, config.n_adversaries,
                                                     config.ablation_size, d)
        majority = [2 * (d - contaminated) > d for contaminated, _, _ in runs]
        events = sum(majority)
        failures = sum(held and not ok for held, (_, _, ok) in zip(majority, runs))
    freq = PartialFrequency(seeds, float(probability), events, benign_hits, u_ref, failures)
    logger.debug("partial D={} over {} seeds: p={:.4f} event={:.4f} benign={:.4f} failures={}",
                 d, seeds, freq.probability, freq.event_rate, freq.benign_rate, failures)
    return freq


def reward_lower_bound_discrete(clean_ablation_returns: Sequence[float]) -> float:
    """Lowest return the ablation policy reached on clean random k-sample streams."""
    returns = list(clean_ablation_returns)
    if not returns:
        raise EmptyInputError("need at least one clean ablation return")
    return min(returns)


def discrete_reward_certificate_holds(attacked_return: float, bound: float, all_certified: bool) -> bool:
    """Vacuously true unless every step of the attacked episode was certified."""
    return not all_certified or attacked_return >= bound - ATOL


@dataclass
class DiscrepancyEstimate:
    eps_R: float
    eps_P: float
    V_max: float
    gamma: float
    witnesses: list = field(default_factory=list, repr=False)


def _range_candidates(state, low, high, grid_points: int) -> list:
    axes = [np.linspace(lo, hi, max(grid_points, 2)) for lo, hi in zip(low, high)]
    candidates = [np.array(p) for p in itertools.product(*axes)]
    if hasattr(state, "critical_actions"):
        candidates.extend(state.critical_actions(low, high))
    return candidates


def estimate_discrepancy(env_model, policy: AblationPolicy, state_sample: Sequence,
                         gamma: float = 0.99, grid_points: int = 3,
                         v_max: float | None = None) -> DiscrepancyEstimate:
    """Sampled sup of reward and transition differences inside Range(A_benign).

    Each state is an environment snapshot; the benign range is taken over all
    of its k-samples. Transition mass uses point-mass total variation, so it is
    0 or 2 on these deterministic environments.
    """
    eps_r = eps_p = 0.0
    witnesses = []
    for index, state in enumerate(state_sample):
        msgs = state.messages()
        history = state.observation()
        actions = evaluate_samples(policy, history, enumerate_k_samples(msgs, policy.ablation_size))
        if policy.action_kind == ActionKind.DISCRETE:
            candidates = sorted(set(int(a) for a in actions))
        else:
            stacked = np.asarray(actions, dtype=float)
            candidates = _range_candidates(state, stacked.min(axis=0), stacked.max(axis=0), grid_points)
        outcomes = [state.peek(a) for a in candidates]
        rewards = [r for r, _ in outcomes]
        hi, lo = int(np.argmax(rewards)), int(np.argmin(rewards))
        if rewards[hi] - rewards[lo] > eps_r:
            eps_r = rewards[hi] - rewards[lo]
            witnesses.append(("reward", index, candidates[hi], candidates[lo]))
        if eps_p < 2.0 and len({key for _, key in outcomes}) > 1:
            eps_p = 2.0
            witnesses.append(("transition", index))
    return DiscrepancyEstimate(eps_r, eps_p, env_model.v_max if v_max is None else v_max, gamma, witnesses)


def reward_bound_continuous(est: DiscrepancyEstimate, v_clean: float) -> float:
    """V_clean - (eps_R + gamma * V_max * eps_P) / (1 - gamma)."""
    if not est.gamma < 1.0:
        raise InvalidRangeError(f"discount must be < 1, got {est.gamma}")
    return v_clean - (est.eps_R + est.gamma * est.V_max * est.eps_P) / (1.0 - est.gamma)


def continuous_reward_certificate_holds(attacked_value: float, bound: float) -> bool:
    return attacked_value >= bound - ATOL
