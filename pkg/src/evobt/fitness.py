"""Episode rollouts and the behavior-tree fitness function.

    J = R - (a1*d_cube_goal^2 + a2*d_robot_cube^2 + a3*loc_err^2
             + beta*nodes + gamma*time + delta*not_placed)

with R = pick_reward*[picked] + place_reward*[placed].
"""
from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field
from typing import Optional

from evobt.bt import BTNode, SkillRegistry, count_nodes
from evobt.text import serialize
from evobt.world import (
    DEFAULT_TIMING,
    ActionTiming,
    FailureProfile,
    Scenario,
    SimWorld,
    WorldState,
    get_profile,
    get_scenario,
    init_world,
    metrics,
)


@dataclass(frozen=True)
class FitnessWeights:
    pick_reward: float = 50.0
    place_reward: float = 100.0
    alpha1: float = 10.0
    alpha2: float = 2.0
    alpha3: float = 1.0
    beta: float = 0.5
    gamma: float = 0.1
    delta: float = 0.0

    def __post_init__(self):
        for name, w in self.__dict__.items():
            if w < 0:
                raise ValueError(f"weight {name}={w} must be nonnegative")


@dataclass(frozen=True)
class EpisodeLimits:
    max_root_ticks: int = 20
    time_cap: float = 300.0

    def __post_init__(self):
        if self.max_root_ticks < 1 or self.time_cap <= 0:
            raise ValueError("episode limits must be positive")


@dataclass(frozen=True)
class EpisodeOutcome:
    picked: bool
    placed: bool
    d_cube_goal: float
    d_robot_cube: float
    loc_err: float
    node_count: int
    exec_time: float
    root_ticks_used: int


@dataclass(frozen=True)
class FitnessReport:
    mean_J: float
    per_rollout_J: tuple
    failure_fraction: float
    rollouts: int


def run_episode(
    tree: BTNode,
    scenario: Scenario,
    profile: FailureProfile,
    limits: EpisodeLimits = EpisodeLimits(),
    rng: Optional[random.Random] = None,
    *,
    registry: Optional[SkillRegistry] = None,
    timing: ActionTiming = DEFAULT_TIMING,
    state: Optional[WorldState] = None,
    on_action=None,
) -> EpisodeOutcome:
    """Tick ``tree`` from a fresh world until the task is done or a limit hits.

    Under a failure-free profile a root tick is a function of the world state
    alone, so a tick that leaves the state unchanged marks a fixed point: the
    episode ends there and the clock spent on that no-op tick is not counted.

    ``state`` overrides the freshly initialized world (used to pin the cube
    location when enumerating Scenario-2 sources).
    """
    if rng is None:
        rng = random.Random(0)
    if state is None:
        state = init_world(scenario, rng)
    world = SimWorld(state, scenario, profile, rng, registry=registry, timing=timing,
                     time_cap=limits.time_cap, on_action=on_action)
    detect_stall = profile.deterministic
    ticks = 0
    while ticks < limits.max_root_ticks and not world.halted:
        before = _snapshot(state) if detect_stall else None
        clock_before = state.clock
        tree.tick(world)
        ticks += 1
        if world.task_done():
            break
        if detect_stall and _snapshot(state) == before:
            state.clock = clock_before
            break
    d_cg, d_rc, loc_err = metrics(state, scenario)
    return EpisodeOutcome(
        picked=state.picked_ever,
        placed=state.placed_ever,
        d_cube_goal=d_cg,
        d_robot_cube=d_rc,
        loc_err=loc_err,
        node_count=count_nodes(tree),
        exec_time=min(state.clock, limits.time_cap),
        root_ticks_used=ticks,
    )


def _snapshot(state: WorldState) -> tuple:
    return (state.robot_pos, state.localized, state.head, state.tucked,
            state.holding, state.cube_at, state.picked_ever, state.placed_ever)


def score(outcome: EpisodeOutcome, weights: FitnessWeights = FitnessWeights()) -> float:
    w = weights
    reward = w.pick_reward * outcome.picked + w.place_reward * outcome.placed
    penalty = (
        w.alpha1 * outcome.d_cube_goal ** 2
        + w.alpha2 * outcome.d_robot_cube ** 2
        + w.alpha3 * outcome.loc_err ** 2
        + w.beta * outcome.node_count
        + w.gamma * outcome.exec_time
        + w.delta * (0.0 if outcome.placed else 1.0)
    )
    return reward - penalty


@dataclass(frozen=True)
class EvalConfig:
    """Everything needed to score a tree, apart from the tree itself."""

    scenario: Scenario = field(default_factory=lambda: get_scenario("scenario1"))
    profile: FailureProfile = field(default_factory=lambda: get_profile("det"))
    limits: EpisodeLimits = EpisodeLimits()
    weights: FitnessWeights = FitnessWeights()
    rollouts: int = 5
    master_seed: int = 0
    registry: Optional[SkillRegistry] = None
    timing: ActionTiming = DEFAULT_TIMING

    def __post_init__(self):
        if self.rollouts < 1:
            raise ValueError("rollouts must be >= 1")

    @property
    def deterministic(self) -> bool:
        return self.profile.deterministic


def rollout_seed(master_seed: int, key: str, index: int) -> int:
    digest = hashlib.sha256(f"{master_seed}|{key}|{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def evaluate(tree: BTNode, cfg: EvalConfig, master_seed: Optional[int] = None) -> FitnessReport:
    """Score ``tree`` over independent rollouts.

    Random streams derive from (master seed, canonical key, rollout index).
    With a deterministic profile one rollout is enough, except that an
    uncertain cube location is enumerated so every source is visited once.
    """
    seed = cfg.master_seed if master_seed is None else master_seed
    key = serialize(tree)
    scores, failures = [], 0
    sources = cfg.scenario.cube_source
    if cfg.deterministic:
        for source in sources:
            state = init_world(cfg.scenario, random.Random(0))
            state.cube_at = source
            out = run_episode(tree, cfg.scenario, cfg.profile, cfg.limits, random.Random(0),
                              registry=cfg.registry, timing=cfg.timing, state=state)
            scores.append(score(out, cfg.weights))
            failures += not out.placed
    else:
        for i in range(cfg.rollouts):
            rng = random.Random(rollout_seed(seed, key, i))
            out = run_episode(tree, cfg.scenario, cfg.profile, cfg.limits, rng,
                              registry=cfg.registry, timing=cfg.timing)
            scores.append(score(out, cfg.weights))
            failures += not out.placed
    k = len(scores)
    return FitnessReport(
        mean_J=math.fsum(scores) / k,
        per_rollout_J=tuple(scores),
        failure_fraction=failures / k,
        rollouts=k,
    )
