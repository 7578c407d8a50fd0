import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from ame.certmath import ActionKind, EnsembleConfig, binomial
from ame.ensemble import (
    AblationPolicy,
    EnsembleDefender,
    KSample,
    MessageSet,
    coordinate_median,
    draw_ranks,
    enumerate_k_samples,
    ensemble_act_continuous,
    ensemble_act_discrete,
    ensemble_act_partial,
    majority_vote,
    sample_k_samples,
    uniform_int,
    unrank_combination,
)
from ame.envs.policies import GridFoodPolicy, MeanPayloadPolicy, PluralitySymbolPolicy
from ame.errors import DimensionMismatchError, EnumerationBudgetExceeded, InvalidRangeError, PolicyAsymmetryError
from ame.threat import AttackBudget, DemandAttacker, OffsetAttacker, PayloadBox


def test_enumerate_small():
    msgs = MessageSet.from_payloads(["x", "y", "z"])
    assert [s.indices for s in enumerate_k_samples(msgs, 2)] == [(0, 1), (0, 2), (1, 2)]


def test_enumerate_counts():
    msgs = MessageSet.from_payloads(list(range(8)))
    assert len(enumerate_k_samples(msgs, 2)) == 28
    full = enumerate_k_samples(msgs, 8)
    assert len(full) == 1 and full[0].indices == tuple(range(8))
    with pytest.raises(InvalidRangeError):
        enumerate_k_samples(msgs, 9)


def test_unrank_matches_lexicographic_order():
    for n, k in [(5, 2), (6, 3), (7, 1), (4, 4)]:
        expected = list(itertools.combinations(range(n), k))
        assert [unrank_combination(r, n, k) for r in range(binomial(n, k))] == expected
    with pytest.raises(InvalidRangeError):
        unrank_combination(10, 5, 2)


def test_sample_full_draw_is_the_enumeration():
    msgs = MessageSet.from_payloads(list(range(6)))
    drawn = sample_k_samples(msgs, 2, 15, seed=7)
    assert sorted(s.indices for s in drawn) == [s.indices for s in enumerate_k_samples(msgs, 2)]


def test_sample_is_deterministic_and_distinct():
    msgs = MessageSet.from_payloads(list(range(8)))
    first = sample_k_samples(msgs, 3, 10, seed=3)
    again = sample_k_samples(msgs, 3, 10, seed=3)
    assert [s.indices for s in first] == [s.indices for s in again]
    assert len({s.indices for s in first}) == 10


def test_single_draw_is_uniform():
    msgs = MessageSet.from_payloads(list(range(4)))
    n1 = binomial(4, 2)
    seeds = 100_000
    counts = Counter(sample_k_samples(msgs, 2, 1, seed=s)[0].indices for s in range(seeds))
    p = 1.0 / n1
    sigma = np.sqrt(seeds * p * (1 - p))
    assert len(counts) == n1
    assert all(abs(c - seeds * p) <= 3 * sigma for c in counts.values())
    assert chisquare(list(counts.values())).pvalue > 1e-3


def test_sampling_beyond_int64_sample_counts():
    msgs = MessageSet.from_payloads(list(range(99)))
    assert binomial(99, 30) > np.iinfo(np.int64).max
    drawn = sample_k_samples(msgs, 30, 7, seed=0)
    assert len({s.indices for s in drawn}) == 7
    assert all(len(s) == 30 and len(set(s.indices)) == 30 for s in drawn)
    assert [s.indices for s in drawn] == [s.indices for s in sample_k_samples(msgs, 30, 7, seed=0)]
    defender = EnsembleDefender(PluralitySymbolPolicy(alphabet=tuple(range(3)), ablation_size=30),
                                EnsembleConfig(100, 5, 30, sample_size=7))
    assert len(defender.samples_for(MessageSet.from_payloads([i % 3 for i in range(99)]), 0)) == 7


def test_big_uniform_int_stays_in_range():
    rng = np.random.default_rng(5)
    low, high = 2**70, 2**70 + 3
    values = [uniform_int(low, high, rng) for _ in range(3000)]
    assert set(values) == {low, low + 1, low + 2}
    assert all(abs(values.count(v) - 1000) <= 3 * np.sqrt(3000 * 2 / 9) for v in set(values))
    assert draw_ranks(binomial(99, 30), 1, rng)[0] < binomial(99, 30)


def test_majority_vote_ties_and_table():
    assert majority_vote([2, 1, 2, 1, 3]) == (1, {1: 2, 2: 2, 3: 1})
    assert majority_vote([4, 4, 4]) == (4, {4: 3})


def test_constant_policy_is_unanimous(constant_policy):
    msgs = MessageSet.from_payloads(list(range(5)))
    action, votes = ensemble_act_discrete(constant_policy, None, msgs)
    assert action == 3
    assert votes == {3: 10}


def test_plurality_identity_policy():
    policy = PluralitySymbolPolicy(alphabet=("a", "b", "c"), ablation_size=1)
    action, votes = ensemble_act_discrete(policy, None, MessageSet.from_payloads(["a", "a", "b", "c"]))
    assert action == 0
    assert votes[0] == 2


def test_plurality_matches_brute_force_tally(plurality_policy, benign_symbols):
    _, votes = ensemble_act_discrete(plurality_policy, None, benign_symbols)
    tally = Counter()
    for pair in itertools.combinations(benign_symbols.payloads, 2):
        counts = Counter(pair)
        best = min(counts, key=lambda s: (-counts[s], "abc".index(s)))
        tally["abc".index(best)] += 1
    assert votes == dict(sorted(tally.items()))
    assert sum(votes.values()) == 10


def test_coordinate_median():
    assert coordinate_median([np.array([1.0]), np.array([2.0]), np.array([100.0])]).tolist() == [2.0]
    assert coordinate_median([np.array([1.0, 5.0])] * 4).tolist() == [1.0, 5.0]
    assert coordinate_median([np.array([0.0]), np.array([1.0])]).tolist() == [0.5]
    with pytest.raises(DimensionMismatchError):
        coordinate_median([np.array([1.0, 2.0])], dim=3)


def test_coordinate_median_agrees_with_sorting():
    rng = np.random.default_rng(0)
    actions = [rng.normal(size=2) for _ in range(28)]
    stacked = np.sort(np.asarray(actions), axis=0)
    expected = (stacked[13] + stacked[14]) / 2
    assert np.allclose(coordinate_median(actions, 2), expected)


@settings(max_examples=50)
@given(st.lists(st.lists(st.floats(-100, 100), min_size=2, max_size=2), min_size=1, max_size=15))
def test_median_is_bounded_by_inputs(rows):
    actions = [np.array(r) for r in rows]
    median = coordinate_median(actions)
    stacked = np.asarray(rows)
    assert np.all(median >= stacked.min(axis=0) - 1e-9)
    assert np.all(median <= stacked.max(axis=0) + 1e-9)


@settings(max_examples=30)
@given(st.permutations(list(range(5))))
def test_full_ensemble_is_permutation_invariant(order):
    policy = MeanPayloadPolicy(ablation_size=2, dim=1)
    msgs = MessageSet.from_payloads([np.array([float(v)]) for v in (1, 7, 3, 9, 4)])
    base = ensemble_act_continuous(policy, None, msgs)
    assert np.allclose(ensemble_act_continuous(policy, None, msgs.permuted(order)), base)
    symbols = MessageSet.from_payloads(["a", "b", "a", "c", "b"])
    plurality = PluralitySymbolPolicy(ablation_size=2)
    assert ensemble_act_discrete(plurality, None, symbols.permuted(order))[0] == \
        ensemble_act_discrete(plurality, None, symbols)[0]


def test_partial_with_all_samples_matches_full(plurality_policy, benign_symbols):
    full = ensemble_act_discrete(plurality_policy, None, benign_symbols)
    assert ensemble_act_partial(plurality_policy, None, benign_symbols, 10, seed=1) == full


def test_partial_single_sample_is_base_policy(mean_policy, benign_scalars):
    action, votes = ensemble_act_partial(mean_policy, None, benign_scalars, 1, seed=4)
    sample = sample_k_samples(benign_scalars, 2, 1, seed=4)[0]
    assert votes is None
    assert np.allclose(action, mean_policy.act(None, sample))


def test_partial_vote_conservation(plurality_policy, benign_symbols):
    _, votes = ensemble_act_partial(plurality_policy, None, benign_symbols, 5, seed=11)
    assert sum(votes.values()) == 5


def test_vanilla_ensemble_is_the_base_policy():
    policy = GridFoodPolicy(ablation_size=8)
    msgs = MessageSet.from_payloads([np.array([3.0, 4.0])] * 5 + [np.array([0.0, 0.0])] * 3)

    class Position:
        position = (1, 1)

    action, votes = ensemble_act_discrete(policy, Position(), msgs)
    assert votes == {action: 1}
    assert action == policy.act(Position(), KSample.from_indices(msgs, range(8)))


def test_asymmetric_policy_is_rejected():
    class FirstMessage(PluralitySymbolPolicy):
        def act(self, history, sample):
            return self.alphabet.index(sample.payloads[0])

    policy = FirstMessage(ablation_size=2)
    with pytest.raises(PolicyAsymmetryError):
        ensemble_act_discrete(policy, None, MessageSet.from_payloads(["a", "b", "c"]))


def test_defender_samples_per_step():
    config = EnsembleConfig(6, 1, 2, sample_size=4)
    defender = EnsembleDefender(PluralitySymbolPolicy(ablation_size=1), config, seed=5)
    assert defender.policy.ablation_size == 2
    msgs = MessageSet.from_payloads(["a", "b", "c", "a", "b"])
    first = [s.indices for s in defender.samples_for(msgs, 0)]
    assert first == [s.indices for s in defender.samples_for(msgs, 0)]
    assert len(first) == 4
    with pytest.raises(DimensionMismatchError):
        defender.decide(None, MessageSet.from_payloads(["a"]))


def test_defender_rejects_mismatched_action_kind():
    with pytest.raises(InvalidRangeError):
        EnsembleDefender(MeanPayloadPolicy(ablation_size=2), EnsembleConfig(6, 1, 2))


def test_message_set_rewrites_mark_tampering():
    msgs = MessageSet.from_payloads(["a", "b", "c"])
    attacked = msgs.with_payloads({1: "c"})
    assert attacked.payloads == ["a", "c", "c"]
    assert attacked.tampered_channels == (1,)
    assert msgs.tampered_channels == ()
    assert KSample.from_indices(attacked, (2, 1)).touches({1})
    assert ActionKind("discrete") == ActionKind.DISCRETE


def test_rewriting_with_the_same_payload_is_not_tampering():
    msgs = MessageSet.from_payloads([np.array([4.0, 4.0]), np.array([1.0, 2.0])])
    same = msgs.with_payloads({0: np.array([4.0, 4.0]), 1: np.array([2.0, 1.0])})
    assert same.tampered_channels == (1,)
    demand = MessageSet.from_payloads([np.array([4.0, 4.0, 4.0])] * 3)
    attacked = DemandAttacker("perm", 3).attack(demand, AttackBudget(1, assume_bounded=False),
                                                np.random.default_rng(0))
    assert attacked.tampered_channels == ()
    assert msgs.with_payloads({0: "x"}).tampered_channels == (0,)


def test_tamper_mask_names_exactly_the_changed_channels():
    box = PayloadBox([0.0, 0.0], [6.0, 6.0])
    msgs = MessageSet.from_payloads([np.array([0.0, 0.0]), np.array([3.0, 2.0]), np.array([6.0, 6.0])])
    attacked = OffsetAttacker([-6.0, -6.0], box).attack(msgs, AttackBudget(3, assume_bounded=False),
                                                        np.random.default_rng(1))
    changed = tuple(i for i, (a, b) in enumerate(zip(msgs.payloads, attacked.payloads))
                    if not np.array_equal(a, b))
    assert attacked.tampered_channels == changed == (1, 2)


def test_resizing_needs_a_dataclass_or_an_override(constant_policy):
    class Plain(AblationPolicy):
        def act(self, history, sample):
            return 0

    with pytest.raises(NotImplementedError):
        EnsembleDefender(Plain(), EnsembleConfig(6, 1, 2))
    resized = EnsembleDefender(constant_policy, EnsembleConfig(6, 1, 3)).policy
    assert resized.ablation_size == 3
    assert resized.action == 3
    assert PluralitySymbolPolicy(ablation_size=1).with_ablation_size(2).ablation_size == 2


def test_enumeration_is_capped_at_64_agents():
    assert len(enumerate_k_samples(MessageSet.from_payloads(list(range(63))), 1)) == 63
    with pytest.raises(EnumerationBudgetExceeded):
        enumerate_k_samples(MessageSet.from_payloads(list(range(64))), 1)
