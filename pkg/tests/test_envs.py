import numpy as np
import pytest

from ame.certmath import ActionKind, EnsembleConfig
from ame.ensemble import EnsembleDefender
from ame.envs import DemandShareEnv, GridFoodEnv, make_env, make_policy
from ame.envs.demand_share import restock_reward
from ame.envs.policies import DemandSharePolicy, GridFoodPolicy
from ame.envs.rollout import (
    EpisodeSeeds,
    clean_ablation_returns,
    min_clean_ablation_return_exhaustive,
    run_batch,
    run_episode,
)
from ame.errors import ConfigError, EnumerationBudgetExceeded, EpisodeFinishedError, InvalidRangeError
from ame.threat import AttackBudget, RandomAttacker


def test_adjacent_step_reaches_food():
    env = GridFoodEnv(width=5, height=5, n_agents=4, start=(2, 2), food=(3, 2))
    env.reset(0)
    result = env.step(1)
    assert result.done
    assert result.reward == -0.5
    with pytest.raises(EpisodeFinishedError):
        env.step(0)


def test_wall_clamps_position():
    env = GridFoodEnv(width=5, height=5, n_agents=4, start=(0, 0), food=(4, 4))
    env.reset(0)
    result = env.step(5)
    assert result.observation.position == (0, 0)
    assert result.reward == -0.5


def test_straight_line_return(grid_defender):
    env = GridFoodEnv(width=7, height=7, n_agents=9, start=(0, 3), food=(5, 3))
    trajectory = run_episode(env, grid_defender)
    assert trajectory.total_reward == pytest.approx(-0.5 * 5)
    assert trajectory.all_certified


def test_noisy_reports_stay_in_the_grid():
    env = GridFoodEnv(width=4, height=4, n_agents=9, noise=3)
    env.reset(5)
    for payload in env.messages().payloads:
        assert np.all(payload >= 0) and np.all(payload <= 3)


def test_restock_reward():
    d = np.array([3.0, 0.0, 0.0])
    assert restock_reward(np.zeros(3), np.zeros(3), d) == pytest.approx(-3.0)
    assert restock_reward(np.array([1.0, 0.0, 0.0]), np.array([2.0, 0.0, 0.0]), d) == 0.0


def _schedule(n_agents, products, horizon, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.integers(0, 20, size=(n_agents, products)).astype(float) for _ in range(horizon + 1)]


def test_demand_episode_matches_replay():
    n, m, horizon = 5, 3, 6
    schedule = _schedule(n, m, horizon)
    env = DemandShareEnv(n_agents=n, products=m, horizon=horizon, demand_schedule=schedule,
                         initial_inventory=[4.0, 4.0, 4.0])
    config = EnsembleConfig(n, 0, n - 1, action_kind=ActionKind.CONTINUOUS)
    trajectory = run_episode(env, EnsembleDefender(DemandSharePolicy(products=m), config))
    expected = []
    for t in range(horizon):
        target = schedule[t].mean(axis=0)
        expected.append(-np.linalg.norm(np.maximum(target, 0.0) - schedule[t + 1][0]))
    assert trajectory.rewards == pytest.approx(expected)


def test_demand_inventory_carries_over():
    schedule = [np.array([[0.0], [0.0]]), np.array([[2.0], [0.0]]), np.array([[1.0], [0.0]])]
    env = DemandShareEnv(n_agents=2, products=1, horizon=2, demand_schedule=schedule, initial_inventory=[5.0])
    env.reset(0)
    env.step(np.array([0.0]))
    assert env.inventory.tolist() == [3.0]


def test_demand_reset_draws_dirichlet_and_uniform_stock():
    env = DemandShareEnv(n_agents=10, products=3)
    obs = env.reset(3)
    assert env.distribution.sum() == pytest.approx(1.0)
    assert np.all(obs.inventory >= 0) and np.all(obs.inventory <= 30)
    assert len(env.messages()) == 9
    for payload in env.messages().payloads:
        assert payload.sum() == env.per_agent


def test_make_env_and_policy():
    env = make_env("demand_share", n_agents=4, products=2)
    policy = make_policy(env, 2)
    assert isinstance(policy, DemandSharePolicy) and policy.products == 2
    assert isinstance(make_policy(make_env("grid_food"), 1), GridFoodPolicy)
    with pytest.raises(ConfigError):
        make_env("taxi")


def test_full_ensemble_ignores_ensemble_seed(grid_defender):
    env_a = GridFoodEnv(noise=1)
    env_b = GridFoodEnv(noise=1)
    a = run_episode(env_a, grid_defender, seeds=EpisodeSeeds(env=3, ensemble=1))
    b = run_episode(env_b, grid_defender, seeds=EpisodeSeeds(env=3, ensemble=99))
    assert [r.action for r in a.records] == [r.action for r in b.records]


def test_zero_budget_attack_equals_clean(grid_defender):
    seeds = EpisodeSeeds(env=4, attack=5, ensemble=6)
    clean = run_episode(GridFoodEnv(noise=1), grid_defender, seeds=seeds)
    attacked = run_episode(GridFoodEnv(noise=1), grid_defender, RandomAttacker(GridFoodEnv().payload_space),
                           AttackBudget(0), seeds)
    assert clean.rewards == attacked.rewards
    assert [r.action for r in clean.records] == [r.action for r in attacked.records]


def test_trajectory_frame(grid_defender):
    env = GridFoodEnv(start=(0, 0), food=(2, 0))
    frame = run_episode(env, grid_defender).to_frame()
    assert list(frame.columns) == ["step", "action", "reward", "tamper_mask", "verdict"]
    assert frame["tamper_mask"].tolist() == ["00000000", "00000000"]
    assert set(frame["verdict"]) == {"certified-benign"}


def test_mismatched_defender_is_rejected(grid_defender):
    with pytest.raises(ConfigError):
        run_episode(GridFoodEnv(n_agents=5), grid_defender)


def test_run_batch_keeps_job_order():
    jobs = [lambda i=i: i * i for i in range(20)]
    assert run_batch(jobs, workers=4) == [i * i for i in range(20)]


def test_identical_reports_give_one_clean_return():
    env_factory = lambda: GridFoodEnv(width=5, height=5, n_agents=6, horizon=6, start=(0, 0), food=(3, 1))
    defender = EnsembleDefender(GridFoodPolicy(ablation_size=2), EnsembleConfig(6, 1, 2))
    returns = clean_ablation_returns(env_factory, defender, streams=20)
    assert len(set(returns)) == 1
    env = env_factory()
    env.reset(0)
    assert min_clean_ablation_return_exhaustive(env, defender.policy) == pytest.approx(returns[0])
    attacked = run_episode(env_factory(), defender, RandomAttacker(env.payload_space), AttackBudget(1))
    assert attacked.all_certified
    assert attacked.discounted_return() == pytest.approx(returns[0])


def test_certified_attacked_return_respects_exhaustive_minimum():
    env_factory = lambda: GridFoodEnv(width=5, height=5, n_agents=6, horizon=6, noise=1)
    defender = EnsembleDefender(GridFoodPolicy(ablation_size=2), EnsembleConfig(6, 1, 2))
    attacker = RandomAttacker(env_factory().payload_space)
    for i in range(5):
        seeds = EpisodeSeeds().offset(i)
        env = env_factory()
        env.reset(seeds.env)
        bound = min_clean_ablation_return_exhaustive(env, defender.policy)
        attacked = run_episode(env_factory(), defender, attacker, AttackBudget(1), seeds)
        if attacked.all_certified:
            assert attacked.discounted_return() >= bound - 1e-9


def test_exhaustive_minimum_refuses_long_horizons():
    env = GridFoodEnv(horizon=20)
    env.reset(0)
    with pytest.raises(EnumerationBudgetExceeded):
        min_clean_ablation_return_exhaustive(env, GridFoodPolicy(ablation_size=2))


@pytest.mark.parametrize("start, food", [((0, 0), (4, 4)), ((0, 6), (5, 2)), ((3, 3), (0, 1)), ((6, 0), (6, 5))])
def test_clean_episode_takes_chebyshev_steps(grid_defender, start, food):
    env = GridFoodEnv(width=7, height=7, n_agents=9, start=start, food=food)
    env.reset(0)
    distance = env.chebyshev_distance()
    assert distance == max(abs(start[0] - food[0]), abs(start[1] - food[1]))
    trajectory = run_episode(env, grid_defender)
    assert len(trajectory.records) == distance
    assert env.chebyshev_distance() == 0


def test_uniform_noise_reports_are_continuous_and_unclipped():
    env = GridFoodEnv(width=4, height=4, n_agents=9, noise=2, noise_kind="uniform", food=(0, 3))
    env.reset(5)
    box = env.payload_space
    assert box.low.tolist() == [-2.0, -2.0]
    assert box.high.tolist() == [5.0, 5.0]
    reports = np.asarray(env.messages().payloads)
    assert np.all(np.abs(reports - np.array([0.0, 3.0])) <= 2.0)
    assert np.any(reports[:, 0] < 0) or np.any(reports[:, 1] > 3)
    assert not np.allclose(reports, np.rint(reports))
    with pytest.raises(InvalidRangeError):
        GridFoodEnv(noise_kind="gaussian")
