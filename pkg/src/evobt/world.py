"""Pick-and-place office world: four tables, one cube, a mobile manipulator.

Preconditions and effects of the skills:

=========  ==========================================  =========================
skill      requires                                    effect
=========  ==========================================  =========================
localise   head up                                     localized (fails p_loc)
move_to X  localized, tucked                           robot at X; may lose
                                                       localization / the cube
head_up    -                                           head up
head_down  -                                           head down
tuck       -                                           arm tucked
pick       localized, head down, at cube's table,      holding (fails p_pick);
           not holding                                 arm untucked
place      holding, at some table                      cube on that table
                                                       (fails p_place); arm
                                                       untucked
=========  ==========================================  =========================

Every action advances the clock by its duration, whether or not it succeeds.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from evobt.bt import (
    FAILURE,
    SUCCESS,
    MissingParam,
    SkillRegistry,
    Status,
    UnexpectedParam,
    UnknownCondition,
    UnknownSkill,
)

GRIPPER = "gripper"

DEFAULT_GEOMETRY = {
    "table1": (-2.0, 2.0),
    "table2": (0.0, 3.0),
    "table3": (2.0, 2.0),
    "goal": (0.0, -2.0),
}


@dataclass(frozen=True)
class Scenario:
    name: str
    cube_source: tuple
    goal_table: str = "goal"
    geometry: dict = field(default_factory=lambda: dict(DEFAULT_GEOMETRY))
    robot_start: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not self.cube_source:
            raise ValueError("cube_source must name at least one table")
        if self.goal_table in self.cube_source:
            raise ValueError("goal table cannot be a cube source")
        for t in (*self.cube_source, self.goal_table):
            if t not in self.geometry:
                raise ValueError(f"table {t!r} missing from geometry")
        if len(set(self.geometry.values())) != len(self.geometry):
            raise ValueError("table positions must be distinct")

    __hash__ = object.__hash__

    @property
    def tables(self) -> tuple:
        return tuple(self.geometry)


SCENARIOS = {
    "scenario1": Scenario("scenario1", cube_source=("table1",)),
    "scenario2": Scenario("scenario2", cube_source=("table1", "table2", "table3")),
}


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None


@dataclass(frozen=True)
class FailureProfile:
    p_loc_fail: float = 0.0
    p_pick_fail: float = 0.0
    p_place_fail: float = 0.0
    p_lose_cube: float = 0.0
    p_lose_loc: float = 0.0

    def __post_init__(self):
        for name, p in self.__dict__.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} outside [0, 1]")

    @property
    def deterministic(self) -> bool:
        return not any(self.__dict__.values())


PROFILES = {
    "det": FailureProfile(0.0, 0.0, 0.0, 0.0, 0.0),
    "stoch1": FailureProfile(0.0, 0.0, 0.0, 0.05, 0.1),
    "stoch2": FailureProfile(0.2, 0.2, 0.1, 0.05, 0.1),
    "stoch3": FailureProfile(0.3, 0.4, 0.2, 0.1, 0.2),
}


def get_profile(name: str) -> FailureProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise KeyError(f"unknown failure profile {name!r}; choose from {sorted(PROFILES)}") from None


@dataclass(frozen=True)
class ActionTiming:
    durations: dict = field(default_factory=lambda: {
        "localise": 5.0, "head_up": 2.0, "head_down": 2.0,
        "tuck": 3.0, "pick": 4.0, "place": 4.0,
    })
    move_speed: float = 0.5

    def __post_init__(self):
        if self.move_speed <= 0 or any(d <= 0 for d in self.durations.values()):
            raise ValueError("durations and move speed must be positive")

    __hash__ = object.__hash__


DEFAULT_TIMING = ActionTiming()


@dataclass
class WorldState:
    robot_pos: tuple
    localized: bool = False
    head: str = "up"
    tucked: bool = True
    holding: bool = False
    cube_at: str = "table1"
    clock: float = 0.0
    picked_ever: bool = False
    placed_ever: bool = False

    def copy(self) -> "WorldState":
        return replace(self)


def init_world(scenario: Scenario, rng: random.Random) -> WorldState:
    if len(scenario.cube_source) == 1:
        cube = scenario.cube_source[0]
    else:
        cube = rng.choice(scenario.cube_source)
    return WorldState(robot_pos=tuple(scenario.robot_start), cube_at=cube)


def _dist(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _table_at(world: WorldState, scenario: Scenario) -> Optional[str]:
    for name, pos in scenario.geometry.items():
        if world.robot_pos == pos:
            return name
    return None


def _nearest_table(point, scenario: Scenario) -> str:
    return min(scenario.geometry, key=lambda t: _dist(point, scenario.geometry[t]))


def _check_arity(skill, param, needs_param, scenario):
    if needs_param:
        if param is None:
            raise MissingParam(f"{skill} requires a table")
        if param not in scenario.geometry:
            raise UnexpectedParam(f"{skill}: unknown table {param!r}")
    elif param is not None:
        raise UnexpectedParam(f"{skill} takes no parameter, got {param!r}")


def exec_action(
    world: WorldState,
    skill: str,
    param: Optional[str],
    profile: FailureProfile,
    rng: random.Random,
    scenario: Scenario,
    timing: ActionTiming = DEFAULT_TIMING,
) -> Status:
    """Execute one skill in place on ``world`` and return its status."""
    if skill == "move_to":
        _check_arity(skill, param, True, scenario)
        start = world.robot_pos
        target = scenario.geometry[param]
        world.clock += _dist(start, target) / timing.move_speed
        if not (world.localized and world.tucked):
            return FAILURE
        # both hazards are sampled on every move so the random stream does not
        # depend on world state
        lose_loc = rng.random() < profile.p_lose_loc
        lose_cube = rng.random() < profile.p_lose_cube
        midpoint = ((start[0] + target[0]) / 2.0, (start[1] + target[1]) / 2.0)
        if lose_cube and world.holding:
            world.holding = False
            world.cube_at = _nearest_table(midpoint, scenario)
        if lose_loc:
            world.robot_pos = midpoint
            world.localized = False
            return FAILURE
        world.robot_pos = target
        return SUCCESS

    if skill not in timing.durations:
        raise UnknownSkill(skill)
    _check_arity(skill, param, False, scenario)
    world.clock += timing.durations[skill]

    if skill == "localise":
        if world.head != "up":
            return FAILURE
        if rng.random() < profile.p_loc_fail:
            return FAILURE
        world.localized = True
        return SUCCESS
    if skill == "head_up":
        world.head = "up"
        return SUCCESS
    if skill == "head_down":
        world.head = "down"
        return SUCCESS
    if skill == "tuck":
        world.tucked = True
        return SUCCESS
    if skill == "pick":
        if (world.holding or not world.localized or world.head != "down"
                or world.robot_pos != scenario.geometry[world.cube_at]):
            return FAILURE
        world.tucked = False
        if rng.random() < profile.p_pick_fail:
            return FAILURE
        world.holding = True
        world.cube_at = GRIPPER
        world.picked_ever = True
        return SUCCESS
    if skill == "place":
        table = _table_at(world, scenario)
        if not world.holding or table is None:
            return FAILURE
        world.tucked = False
        if rng.random() < profile.p_place_fail:
            return FAILURE
        world.holding = False
        world.cube_at = table
        if table == scenario.goal_table:
            world.placed_ever = True
        return SUCCESS
    raise UnknownSkill(skill)


CONDITIONS = ("have_cube", "cube_placed", "task_done")


def eval_condition(world: WorldState, check: str, param: Optional[str], scenario: Scenario) -> Status:
    if check == "have_cube":
        _check_arity(check, param, False, scenario)
        return SUCCESS if world.holding else FAILURE
    if check == "cube_placed":
        _check_arity(check, param, True, scenario)
        return SUCCESS if world.cube_at == param else FAILURE
    if check == "task_done":
        _check_arity(check, param, False, scenario)
        return SUCCESS if world.cube_at == scenario.goal_table else FAILURE
    raise UnknownCondition(check)


def cube_position(world: WorldState, scenario: Scenario) -> tuple:
    if world.cube_at == GRIPPER:
        return world.robot_pos
    return scenario.geometry[world.cube_at]


def metrics(world: WorldState, scenario: Scenario) -> tuple:
    """Return (cube-goal distance, robot-cube distance, localization error)."""
    cube = cube_position(world, scenario)
    d_cube_goal = _dist(cube, scenario.geometry[scenario.goal_table])
    d_robot_cube = _dist(world.robot_pos, cube)
    return d_cube_goal, d_robot_cube, 0.0 if world.localized else 1.0


_REGISTRIES: dict = {}


def _default_registry(tables: tuple) -> SkillRegistry:
    if tables not in _REGISTRIES:
        _REGISTRIES[tables] = SkillRegistry.default(tables)
    return _REGISTRIES[tables]


class SimWorld:
    """WorldPort over a WorldState, used to tick trees in the simulator.

    Leaves are checked against ``registry`` before they reach the simulator.
    Once ``halted`` is set (task done or time cap reached) further actions
    are refused with Failure and leave the state untouched.
    """

    def __init__(self, state, scenario, profile, rng, registry=None,
                 timing=DEFAULT_TIMING, time_cap=math.inf,
                 on_action: Optional[Callable] = None):
        self.state = state
        self.scenario = scenario
        self.profile = profile
        self.rng = rng
        self.registry = registry if registry is not None else _default_registry(scenario.tables)
        self.timing = timing
        self.time_cap = time_cap
        self.on_action = on_action
        self.halted = False
        self.actions_executed = 0

    def exec_action(self, skill, param=None) -> Status:
        self.registry.check_action(skill, param)
        if self.halted:
            return FAILURE
        before = self.state.copy() if self.on_action else None
        status = exec_action(self.state, skill, param, self.profile, self.rng,
                             self.scenario, self.timing)
        self.actions_executed += 1
        if self.state.cube_at == self.scenario.goal_table or self.state.clock >= self.time_cap:
            self.halted = True
        if self.on_action:
            self.on_action(skill, param, status, before, self.state)
        return status

    def eval_condition(self, check, param=None) -> Status:
        self.registry.check_condition(check, param)
        return eval_condition(self.state, check, param, self.scenario)

    def task_done(self) -> bool:
        return self.state.cube_at == self.scenario.goal_table
