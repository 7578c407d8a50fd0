"""Desk-scale environments and the scripted policies that act in them."""

from ..errors import ConfigError
from .base import Environment, StepResult
from .demand_share import DemandObservation, DemandShareEnv
from .grid_food import DIRECTIONS, GridFoodEnv, GridObservation
from .policies import DemandSharePolicy, GridFoodPolicy, MeanPayloadPolicy, PluralitySymbolPolicy
from .rollout import EpisodeSeeds, StepRecord, Trajectory, run_episode

__all__ = [
    "DIRECTIONS", "DemandObservation", "DemandShareEnv", "DemandSharePolicy", "ENVIRONMENTS",
    "Environment", "EpisodeSeeds", "GridFoodEnv", "GridFoodPolicy", "GridObservation",
    "MeanPayloadPolicy", "PluralitySymbolPolicy", "StepRecord", "StepResult", "Trajectory",
    "make_env", "make_policy", "run_episode",
]

ENVIRONMENTS = {"grid_food": GridFoodEnv, "demand_share": DemandShareEnv}


def make_env(name: str, **params) -> Environment:
    if name not in ENVIRONMENTS:
        raise ConfigError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}")
    return ENVIRONMENTS[name](**params)


def make_policy(env: Environment, ablation_size: int, **params):
    """The scripted base policy that matches ``env``."""
    if isinstance(env, GridFoodEnv):
        return GridFoodPolicy(ablation_size=ablation_size, **params)
    if isinstance(env, DemandShareEnv):
        return DemandSharePolicy(ablation_size=ablation_size, products=env.products, **params)
    raise ConfigError(f"no scripted policy for {type(env).__name__}")
