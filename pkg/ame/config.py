"""Experiment configuration: YAML file merged over defaults, CLI flags over the file."""

from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import yaml

from .certmath import ActionKind, EnsembleConfig
from .errors import AMEError, ConfigError
from .threat import AttackBudget, ChannelPolicy

ATTACKS = ("none", "random", "perm", "swap", "flip", "offset", "greedy")
DEFENDERS = ("ame", "vanilla", "no_comm")
SWEEP_VARIABLES = ("k", "D", "C")
NOISE_KINDS = ("integer", "uniform")


@dataclass
class EnvironmentSection:
    name: str = "grid_food"
    width: int = 7
    height: int = 7
    horizon: int = 20
    noise: float = 0
    noise_kind: str = "integer"
    products: int = 3
    buyers: int = 300
    aggregate: str = "median"


@dataclass
class EnsembleSection:
    n_agents: int = 9
    n_adversaries: int = 2
    ablation_size: int = 2
    sample_size: int | None = None
    defender: str = "ame"


@dataclass
class AttackSection:
    name: str = "random"
    n_adversaries: int | None = None
    channel_policy: str = "per_step"
    stress: bool = False
    offset: list[float] = field(default_factory=lambda: [-6.0, -6.0])
    horizon: int = 1
    seed_aware: bool = False
    candidates: list | None = None


@dataclass
class RunSection:
    episodes: int = 20
    gamma: float = 0.99
    workers: int = 1


@dataclass
class SeedSection:
    env: int = 0
    attack: int = 1
    ensemble: int = 2


@dataclass
class OutputSection:
    dir: str = "results"
    format: str = "csv"


@dataclass
class SweepSection:
    variable: str = "k"
    values: list[int] | None = None


@dataclass
class VerifySection:
    mode: str = "full"
    seeds: int = 10000
    instances: list[dict] | None = None
    reward_episodes: int = 100


@dataclass
class DetectSection:
    window: int = 20
    flag: int = 2


@dataclass
class ExperimentConfig:
    environment: EnvironmentSection = field(default_factory=EnvironmentSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    attack: AttackSection = field(default_factory=AttackSection)
    run: RunSection = field(default_factory=RunSection)
    seeds: SeedSection = field(default_factory=SeedSection)
    output: OutputSection = field(default_factory=OutputSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    verify: VerifySection = field(default_factory=VerifySection)
    detect: DetectSection = field(default_factory=DetectSection)

    @property
    def action_kind(self) -> ActionKind:
        return ActionKind.CONTINUOUS if self.environment.name == "demand_share" else ActionKind.DISCRETE

    @property
    def attack_budget_size(self) -> int:
        if self.attack.n_adversaries is None:
            return self.ensemble.n_adversaries
        return self.attack.n_adversaries

    def ensemble_config(self) -> EnsembleConfig:
        e = self.ensemble
        k = e.n_agents - 1 if e.defender == "vanilla" else e.ablation_size
        sample_size = None if e.defender == "vanilla" else e.sample_size
        return EnsembleConfig(e.n_agents, e.n_adversaries, k, sample_size, self.action_kind)

    def attack_budget(self) -> AttackBudget:
        return AttackBudget(self.attack_budget_size, ChannelPolicy(self.attack.channel_policy),
                            assume_bounded=not self.attack.stress)

    def validate(self) -> "ExperimentConfig":
        from .envs import ENVIRONMENTS

        if self.environment.name not in ENVIRONMENTS:
            raise ConfigError(f"unknown environment {self.environment.name!r}")
        if self.environment.aggregate not in ("median", "mean"):
            raise ConfigError(f"unknown report aggregate {self.environment.aggregate!r}")
        if self.environment.noise_kind not in NOISE_KINDS:
            raise ConfigError(f"unknown report noise kind {self.environment.noise_kind!r}; choose from {NOISE_KINDS}")
        if self.attack.name not in ATTACKS:
            raise ConfigError(f"unknown attack {self.attack.name!r}; choose from {ATTACKS}")
        if self.attack.name in ("perm", "swap", "flip") and self.environment.name != "demand_share":
            raise ConfigError(f"{self.attack.name} attack rewrites demand vectors; use demand_share")
        if self.ensemble.defender not in DEFENDERS:
            raise ConfigError(f"unknown defender {self.ensemble.defender!r}; choose from {DEFENDERS}")
        if self.sweep.variable not in SWEEP_VARIABLES:
            raise ConfigError(f"unknown sweep variable {self.sweep.variable!r}")
        if not 0.0 <= self.run.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.run.gamma}")
        if self.run.episodes < 1:
            raise ConfigError("need at least one episode")
        if self.verify.mode not in ("full", "partial"):
            raise ConfigError(f"unknown verify mode {self.verify.mode!r}")
        try:
            self.ensemble_config()
            if self.attack.name != "none":
                self.attack_budget().validate(self.ensemble.n_agents - 1)
        except AMEError as e:
            raise ConfigError(str(e)) from e
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _merge(section, values: dict, path: str):
    known = {f.name: f for f in fields(section)}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {path}{key}")
        current = getattr(section, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"config section {path}{key} must be a mapping")
            _merge(current, value, f"{path}{key}.")
        else:
            setattr(section, key, value)


def config_from_dict(values: dict | None) -> ExperimentConfig:
    config = ExperimentConfig()
    _merge(config, values or {}, "")
    return config


def load_config(path: str | Path | None) -> ExperimentConfig:
    from utils.data_access import DataAccess

    if path is None:
        return ExperimentConfig()
    try:
        values = DataAccess.load_yaml(path)
    except (FileNotFoundError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(values, dict):
        raise ConfigError(f"config {path} must be a mapping of sections")
    return config_from_dict(values)


# CLI flag -> (section, key)
OVERRIDES = {
    "seed_env": ("seeds", "env"),
    "seed_attack": ("seeds", "attack"),
    "seed_ensemble": ("seeds", "ensemble"),
    "out": ("output", "dir"),
    "format": ("output", "format"),
    "episodes": ("run", "episodes"),
    "workers": ("run", "workers"),
    "env": ("environment", "name"),
    "n": ("ensemble", "n_agents"),
    "c": ("ensemble", "n_adversaries"),
    "k": ("ensemble", "ablation_size"),
    "d": ("ensemble", "sample_size"),
    "attack": ("attack", "name"),
    "mode": ("verify", "mode"),
    "seeds": ("verify", "seeds"),
    "sweep_var": ("sweep", "variable"),
    "values": ("sweep", "values"),
    "flag": ("detect", "flag"),
}


def apply_overrides(config: ExperimentConfig, args: Any) -> ExperimentConfig:
    """Flags that were actually given win over the file."""
    for flag, (section, key) in OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(getattr(config, section), key, value)
    return config
