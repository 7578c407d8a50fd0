import numpy as np
import pytest

from ame.certmath import ActionKind, EnsembleConfig
from ame.ensemble import AblationPolicy, EnsembleDefender, MessageSet
from ame.envs import DemandShareEnv, GridFoodEnv
from ame.envs.policies import GridFoodPolicy, MeanPayloadPolicy, PluralitySymbolPolicy


class ConstantPolicy(AblationPolicy):
    def __init__(self, action=3, ablation_size=2):
        self.action = action
        self.ablation_size = ablation_size

    def act(self, history, sample):
        return self.action

    def with_ablation_size(self, k):
        return ConstantPolicy(self.action, k)


@pytest.fixture
def symbols():
    return ("a", "b", "c")


@pytest.fixture
def plurality_policy(symbols):
    return PluralitySymbolPolicy(alphabet=symbols, ablation_size=2)


@pytest.fixture
def discrete_config():
    return EnsembleConfig(6, 1, 2)


@pytest.fixture
def benign_symbols():
    return MessageSet.from_payloads(["a", "a", "a", "b", "c"])


@pytest.fixture
def mean_policy():
    return MeanPayloadPolicy(ablation_size=2, dim=1)


@pytest.fixture
def continuous_config():
    return EnsembleConfig(6, 1, 2, action_kind=ActionKind.CONTINUOUS)


@pytest.fixture
def benign_scalars():
    return MessageSet.from_payloads([np.array([float(v)]) for v in (1, 2, 3, 4, 5)])


@pytest.fixture
def grid_env():
    return GridFoodEnv(width=7, height=7, n_agents=9, horizon=20)


@pytest.fixture
def grid_defender():
    return EnsembleDefender(GridFoodPolicy(ablation_size=2), EnsembleConfig(9, 2, 2))


@pytest.fixture
def demand_env():
    return DemandShareEnv(n_agents=6, products=3, horizon=8)


@pytest.fixture
def demand_config():
    return EnsembleConfig(6, 1, 2, action_kind=ActionKind.CONTINUOUS)


@pytest.fixture
def constant_policy():
    return ConstantPolicy(action=3, ablation_size=2)
