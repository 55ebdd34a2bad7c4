"""Experiment configuration loaded from JSON."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Union

from evobt.fitness import EpisodeLimits, EvalConfig, FitnessWeights
from evobt.gp import ConfigError, GPConfig
from evobt.llm import ProviderConfig
from evobt.world import get_profile, get_scenario

SEEDING_MODES = ("none", "llm", "replay")
DEFAULT_TASK = "Take the cube to the black table and place it there."
DEFAULT_TARGET_J = 135.0


def default_replay_dir(scenario: str) -> Path:
    return Path(str(resources.files("evobt") / "data" / "replay" / scenario))


@dataclass(frozen=True)
class SeedingConfig:
    mode: str = "none"
    n_seeds: int = 30
    # "empty-tree" gates at the fitness of the empty Sequence; a number is used as is
    theta: Union[str, float] = "empty-tree"
    task_text: str = DEFAULT_TASK
    image: Optional[str] = None
    script_dir: Optional[str] = None
    max_attempts: Optional[int] = None
    provider: ProviderConfig = ProviderConfig()

    def threshold(self, eval_cfg: EvalConfig) -> float:
        from evobt.gp import empty_tree_threshold
        if self.theta == "empty-tree":
            return empty_tree_threshold(eval_cfg)
        return float(self.theta)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "scenario1"
    profile: str = "det"
    gp: GPConfig = field(default_factory=GPConfig)
    weights: FitnessWeights = FitnessWeights()
    limits: EpisodeLimits = EpisodeLimits()
    rollouts: int = 5
    seeding: SeedingConfig = SeedingConfig()
    runs: int = 10
    master_seed: int = 0
    output_dir: str = "out"
    target_J: float = DEFAULT_TARGET_J
    label: Optional[str] = None
    record_wall_time: bool = False

    def check(self) -> None:
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.rollouts < 1:
            raise ConfigError("rollouts must be >= 1")
        try:
            get_scenario(self.scenario)
            get_profile(self.profile)
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from None
        if self.seeding.mode not in SEEDING_MODES:
            raise ConfigError(f"seeding.mode must be one of {SEEDING_MODES}")
        if self.seeding.n_seeds < 1:
            raise ConfigError("seeding.n_seeds must be >= 1")
        if self.seeding.theta != "empty-tree":
            try:
                float(self.seeding.theta)
            except (TypeError, ValueError):
                raise ConfigError("seeding.theta must be 'empty-tree' or a number") from None
        self.gp.check()

    def eval_config(self, master_seed: int) -> EvalConfig:
        return EvalConfig(
            scenario=get_scenario(self.scenario),
            profile=get_profile(self.profile),
            limits=self.limits,
            weights=self.weights,
            rollouts=self.rollouts,
            master_seed=master_seed,
        )

    def replay_dir(self, base: Optional[Path] = None) -> Path:
        if self.seeding.script_dir is None:
            return default_replay_dir(self.scenario)
        path = Path(self.seeding.script_dir)
        if not path.is_absolute() and base is not None:
            path = base / path
        return path


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    nested = {}
    for name, cls in (("gp", GPConfig), ("weights", FitnessWeights), ("limits", EpisodeLimits)):
        if name in data:
            nested[name] = _build(cls, data.pop(name), name)
    if "seeding" in data:
        seeding = dict(data.pop("seeding"))
        if "provider" in seeding:
            seeding["provider"] = _build(ProviderConfig, seeding["provider"], "seeding.provider")
        theta = seeding.get("theta")
        if isinstance(theta, str) and theta not in ("empty-tree",):
            try:
                seeding["theta"] = float(theta)  # accepts "-inf"
            except ValueError:
                raise ConfigError("seeding.theta must be 'empty-tree' or a number") from None
        nested["seeding"] = _build(SeedingConfig, seeding, "seeding")
    cfg = _build(ExperimentConfig, {**data, **nested}, "config")
    cfg.check()
    if isinstance(cfg.seeding.theta, float) and math.isnan(cfg.seeding.theta):
        raise ConfigError("seeding.theta cannot be NaN")
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(data)


def with_overrides(cfg: ExperimentConfig, output_dir=None, master_seed=None) -> ExperimentConfig:
    changes = {}
    if output_dir is not None:
        changes["output_dir"] = str(output_dir)
    if master_seed is not None:
        changes["master_seed"] = master_seed
    return replace(cfg, **changes) if changes else cfg
