"""Closed-form combinatorics behind the ensemble certificates.

Every count is an exact Python integer and every probability an exact
``Fraction``; floats only appear when a caller asks for one.
"""

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

from .errors import ConditionViolatedError, InvalidRangeError

MAX_CLOSED_FORM_AGENTS = 512
MAX_EXHAUSTIVE_AGENTS = 64


class ActionKind(str, Enum):
    DISCRETE = "discrete"
    CONTINUOUS = "continuous"


def binomial(n: int, r: int) -> int:
    """C(n, r) as an exact integer, 0 when r > n."""
    if n < 0 or r < 0:
        raise InvalidRangeError(f"binomial needs non-negative arguments, got ({n}, {r})")
    if r > n:
        return 0
    return math.comb(n, r)


def _check_k(n_agents: int, k: int):
    if n_agents < 2:
        raise InvalidRangeError(f"need at least 2 agents, got N={n_agents}")
    if n_agents > MAX_CLOSED_FORM_AGENTS:
        raise InvalidRangeError(f"N={n_agents} exceeds the closed-form cap {MAX_CLOSED_FORM_AGENTS}")
    if not 1 <= k <= n_agents - 1:
        raise InvalidRangeError(f"ablation size k={k} outside [1, {n_agents - 1}]")


def _check_c(n_agents: int, n_adversaries: int):
    if not 0 <= n_adversaries <= n_agents - 1:
        raise InvalidRangeError(f"adversary count C={n_adversaries} outside [0, {n_agents - 1}]")


def sample_counts(n_agents: int, n_adversaries: int, k: int) -> tuple[int, int]:
    """(n1, n2): all k-samples, and k-samples that avoid every adversarial channel."""
    return binomial(n_agents - 1, k), binomial(n_agents - 1 - n_adversaries, k)


def dominating_benign_holds(n_agents: int, n_adversaries: int, k: int) -> bool:
    """Purely benign k-samples are a strict majority: 2*C(N-1-C, k) > C(N-1, k)."""
    _check_k(n_agents, k)
    _check_c(n_agents, n_adversaries)
    n1, n2 = sample_counts(n_agents, n_adversaries, k)
    return 2 * n2 > n1


def assumption_holds(n_agents: int, n_adversaries: int) -> bool:
    """Fewer than half of the N-1 received messages can be adversarial."""
    return 2 * n_adversaries < n_agents - 1


def max_certifiable_k(n_agents: int, n_adversaries: int) -> int | None:
    """Largest k with a dominating benign sample, or None when no k works."""
    if n_agents < 2:
        raise InvalidRangeError(f"need at least 2 agents, got N={n_agents}")
    if not assumption_holds(n_agents, n_adversaries):
        return None
    return max(
        (k for k in range(1, n_agents) if dominating_benign_holds(n_agents, n_adversaries, k)),
        default=None,
    )


def max_certifiable_C(n_agents: int, k: int) -> int:
    """Largest adversary count C >= 0 that ablation size k still certifies."""
    _check_k(n_agents, k)
    return max(c for c in range(0, n_agents) if dominating_benign_holds(n_agents, c, k))


def adversarial_vote_bound(n_agents: int, n_adversaries: int, k: int) -> int:
    """u_adv: how many of the C(N-1, k) votes can contain an adversarial message."""
    _check_k(n_agents, k)
    _check_c(n_agents, n_adversaries)
    n1, n2 = sample_counts(n_agents, n_adversaries, k)
    return n1 - n2


def _check_partial(n_agents, n_adversaries, k, sample_size):
    _check_k(n_agents, k)
    _check_c(n_agents, n_adversaries)
    n1, n2 = sample_counts(n_agents, n_adversaries, k)
    if not 1 <= sample_size <= n1:
        raise InvalidRangeError(f"sample size D={sample_size} outside [1, {n1}]")
    return n1, n2


def partial_sample_prob_discrete(n_agents: int, n_adversaries: int, k: int, sample_size: int,
                                 u_max: int, exact: bool = False) -> float | Fraction:
    """Probability that a D-ensemble vote with top count u_max is certified.

    Certain when u_max > n1 - n2; otherwise the hypergeometric mass of drawing at
    most u_max - 1 contaminated samples out of D.
    """
    n1, n2 = _check_partial(n_agents, n_adversaries, k, sample_size)
    if not 0 <= u_max <= sample_size:
        raise InvalidRangeError(f"u_max={u_max} outside [0, {sample_size}]")
    contaminated = n1 - n2
    if u_max > contaminated:
        prob = Fraction(1)
    else:
        total = binomial(n1, sample_size)
        hits = sum(
            binomial(contaminated, j) * binomial(n2, sample_size - j)
            for j in range(0, u_max)
            if sample_size - j >= 0
        )
        prob = Fraction(hits, total)
    return prob if exact else float(prob)


def partial_sample_prob_continuous(n_agents: int, n_adversaries: int, k: int, sample_size: int,
                                   exact: bool = False) -> float | Fraction:
    """Probability that more than half of D drawn k-samples are purely benign."""
    n1, n2 = _check_partial(n_agents, n_adversaries, k, sample_size)
    if 2 * n2 <= n1:
        raise ConditionViolatedError(
            f"no dominating benign sample for N={n_agents}, C={n_adversaries}, k={k}"
        )
    total = binomial(n1, sample_size)
    hits = sum(
        binomial(n2, j) * binomial(n1 - n2, sample_size - j)
        for j in range(sample_size // 2 + 1, sample_size + 1)
    )
    prob = Fraction(hits, total)
    return prob if exact else float(prob)


def partial_sample_curve(n_agents: int, n_adversaries: int, k: int, u_max: int | None = None,
                         max_points: int = 200) -> list[dict]:
    """p_D for D = 1..min(n1, max_points).

    Without ``u_max`` the continuous probability is used (requires the dominating
    benign condition); with it, the discrete one at top count min(u_max, D).
    """
    n1, _ = sample_counts(n_agents, n_adversaries, k)
    rows = []
    for d in range(1, min(n1, max_points) + 1):
        if u_max is None:
            p = partial_sample_prob_continuous(n_agents, n_adversaries, k, d)
        else:
            p = partial_sample_prob_discrete(n_agents, n_adversaries, k, d, min(u_max, d))
        rows.append({"D": d, "p_D": p})
    return rows


def feasibility_table(layout: str, n_agents: int | None = None,
                      n_values=range(3, 31), fixed_values=(1, 2, 3)) -> list[dict]:
    """Rows for the three trade-off layouts.

    ``c_vs_k``: for one N, the largest k for every C below the assumption bound.
    ``n_vs_c``: for each fixed k, the largest C as N grows.
    ``n_vs_k``: for each fixed C, the largest k as N grows.
    """
    rows = []
    if layout == "c_vs_k":
        if n_agents is None:
            raise InvalidRangeError("c_vs_k layout needs N")
        for c in range(1, n_agents):
            k = max_certifiable_k(n_agents, c)
            if k is None:
                break
            rows.append({"N": n_agents, "C": c, "k": k})
    elif layout == "n_vs_c":
        for k in fixed_values:
            for n in n_values:
                if k <= n - 1:
                    rows.append({"k": k, "N": n, "C": max_certifiable_C(n, k)})
    elif layout == "n_vs_k":
        for c in fixed_values:
            for n in n_values:
                k = max_certifiable_k(n, c)
                if k is not None:
                    rows.append({"C": c, "N": n, "k": k})
    else:
        raise InvalidRangeError(f"unknown feasibility layout {layout!r}")
    return rows


@dataclass(frozen=True)
class EnsembleConfig:
    """(N, C, k, D) plus the action kind; n1, n2 and u_adv are always derived."""

    n_agents: int
    n_adversaries: int
    ablation_size: int
    sample_size: int | None = None
    action_kind: ActionKind = ActionKind.DISCRETE

    def __post_init__(self):
        _check_k(self.n_agents, self.ablation_size)
        _check_c(self.n_agents, self.n_adversaries)
        object.__setattr__(self, "action_kind", ActionKind(self.action_kind))
        if self.sample_size is None:
            object.__setattr__(self, "sample_size", self.n1)
        if not 1 <= self.sample_size <= self.n1:
            raise InvalidRangeError(f"sample size D={self.sample_size} outside [1, {self.n1}]")

    @property
    def n_channels(self) -> int:
        return self.n_agents - 1

    @property
    def n1(self) -> int:
        return binomial(self.n_agents - 1, self.ablation_size)

    @property
    def n2(self) -> int:
        return binomial(self.n_agents - 1 - self.n_adversaries, self.ablation_size)

    @property
    def u_adv(self) -> int:
        return self.n1 - self.n2

    @property
    def is_full(self) -> bool:
        return self.sample_size == self.n1

    @property
    def dominating_benign(self) -> bool:
        return 2 * self.n2 > self.n1

    def with_changes(self, **changes) -> "EnsembleConfig":
        fields = {
            "n_agents": self.n_agents,
            "n_adversaries": self.n_adversaries,
            "ablation_size": self.ablation_size,
            "sample_size": None if self.is_full else self.sample_size,
            "action_kind": self.action_kind,
        }
        fields.update(changes)
        return EnsembleConfig(**fields)
