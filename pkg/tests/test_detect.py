import numpy as np
import pytest

from ame.certmath import ActionKind, EnsembleConfig, max_certifiable_k
from ame.detect import BiasScore, action_bias, average_bias, collect_action_bias, flag_and_recertify
from ame.ensemble import EnsembleDefender, MessageSet
from ame.envs import DemandShareEnv
from ame.envs.demand_share import DemandObservation
from ame.envs.policies import DemandSharePolicy, MeanPayloadPolicy
from ame.envs.rollout import EpisodeSeeds
from ame.errors import InvalidRangeError
from ame.threat import AttackBudget, ChannelPolicy, OffsetAttacker


def test_identical_messages_have_no_bias():
    policy = MeanPayloadPolicy(ablation_size=1, dim=2)
    scores = action_bias(policy, None, MessageSet.from_payloads([np.array([1.0, 1.0])] * 5))
    assert [s.beta for s in scores] == [0.0] * 5


def test_single_outlier_scores_its_offset():
    policy = MeanPayloadPolicy(ablation_size=1, dim=3)
    payloads = [np.zeros(3)] * 5
    payloads[2] = np.full(3, 0.5)
    scores = action_bias(policy, None, MessageSet.from_payloads(payloads))
    assert scores[2].beta == pytest.approx(1.5)
    assert [s.beta for i, s in enumerate(scores) if i != 2] == [0.0] * 4


def test_bias_needs_three_channels():
    with pytest.raises(InvalidRangeError):
        action_bias(MeanPayloadPolicy(ablation_size=1), None, MessageSet.from_payloads([np.zeros(1)] * 2))


def test_bias_uses_the_single_message_policy():
    policy = DemandSharePolicy(ablation_size=3, products=2)
    history = DemandObservation(np.zeros(2), np.zeros(2), 0)
    msgs = MessageSet.from_payloads([np.zeros(2), np.zeros(2), np.array([4.0, 0.0])])
    scores = action_bias(policy, history, msgs)
    assert scores[2].beta == pytest.approx(2.0)


def test_average_bias():
    batches = [[BiasScore(0, 1.0), BiasScore(1, 3.0)], [BiasScore(0, 3.0), BiasScore(1, 1.0)]]
    averaged = average_bias(batches, episodes=2)
    assert [(s.channel_id, s.beta, s.episodes_averaged) for s in averaged] == [(0, 2.0, 2), (1, 2.0, 2)]
    assert average_bias([]) == []


def test_recertify_worked_example():
    scores = [BiasScore(j, 0.0) for j in range(29)]
    scores[7] = BiasScore(7, 9.0)
    flagged, new_k = flag_and_recertify(scores, 1, EnsembleConfig(30, 3, 1))
    assert flagged == (7,)
    assert max_certifiable_k(30, 3) == 5
    assert new_k == 8


def test_recertify_edges():
    config = EnsembleConfig(10, 2, 1)
    scores = [BiasScore(j, float(j)) for j in range(9)]
    assert flag_and_recertify(scores, 0, config) == ((), max_certifiable_k(10, 2))
    flagged, new_k = flag_and_recertify(scores, 3, config)
    assert flagged == (6, 7, 8)
    assert new_k == 10 - 1 - 3
    with pytest.raises(InvalidRangeError):
        flag_and_recertify(scores, 10, config)


def test_offset_channels_rank_on_top():
    n = 9
    env_factory = lambda: DemandShareEnv(n_agents=n, products=3, horizon=6)
    template = env_factory()
    config = EnsembleConfig(n, 2, 2, action_kind=ActionKind.CONTINUOUS)
    defender = EnsembleDefender(DemandSharePolicy(ablation_size=2, products=3), config)
    budget = AttackBudget(2, ChannelPolicy.FIXED_SET, fixed_channels=(1, 5))
    attacker = OffsetAttacker(np.full(3, 15.0), template.payload_space)
    hits = 0
    for rep in range(100):
        scores = collect_action_bias(env_factory, defender, DemandSharePolicy(ablation_size=1, products=3),
                                     attacker, budget, episodes=20, seeds=EpisodeSeeds().offset(100 * rep))
        flagged, _ = flag_and_recertify(scores, 2, config)
        hits += flagged == (1, 5)
    assert hits >= 95


def test_no_attack_with_identical_reports_scores_zero():
    n, m, horizon = 6, 2, 3
    schedule = [np.tile([4.0, 2.0], (n, 1))] * (horizon + 1)
    env_factory = lambda: DemandShareEnv(n_agents=n, products=m, horizon=horizon, demand_schedule=schedule)
    config = EnsembleConfig(n, 1, 2, action_kind=ActionKind.CONTINUOUS)
    defender = EnsembleDefender(DemandSharePolicy(ablation_size=2, products=m), config)
    scores = collect_action_bias(env_factory, defender, DemandSharePolicy(products=m), episodes=2)
    assert max(s.beta for s in scores) == 0.0
    assert all(s.episodes_averaged == 2 for s in scores)
