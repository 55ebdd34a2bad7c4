"""Behavior-tree data model and tick semantics.

Trees are immutable frozen dataclasses, so they hash, compare structurally and
can be shared freely between individuals of a GP population.
"""
from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Iterator, Optional, Protocol, Union


class Status(enum.Enum):
    SUCCESS = "Success"
    FAILURE = "Failure"

    def __bool__(self) -> bool:
        return self is Status.SUCCESS


SUCCESS = Status.SUCCESS
FAILURE = Status.FAILURE


class BTError(Exception):
    """Base class for behavior-tree execution errors."""


class UnknownSkill(BTError):
    pass


class UnknownCondition(BTError):
    pass


class MissingParam(BTError):
    pass


class UnexpectedParam(BTError):
    pass


class WorldPort(Protocol):
    def exec_action(self, skill: str, param: Optional[str]) -> Status: ...

    def eval_condition(self, check: str, param: Optional[str]) -> Status: ...


@dataclass(frozen=True)
class Action:
    skill: str
    param: Optional[str] = None

    def tick(self, world: WorldPort) -> Status:
        return world.exec_action(self.skill, self.param)


@dataclass(frozen=True)
class Condition:
    check: str
    param: Optional[str] = None

    def tick(self, world: WorldPort) -> Status:
        return world.eval_condition(self.check, self.param)


@dataclass(frozen=True)
class Sequence:
    children: tuple = ()

    def tick(self, world: WorldPort) -> Status:
        for child in self.children:
            if child.tick(world) is FAILURE:
                return FAILURE
        return SUCCESS


@dataclass(frozen=True)
class Fallback:
    children: tuple = ()

    def tick(self, world: WorldPort) -> Status:
        for child in self.children:
            if child.tick(world) is SUCCESS:
                return SUCCESS
        return FAILURE


@dataclass(frozen=True)
class Parallel:
    """Succeeds when at least ``z`` children succeed.

    Children are ticked left to right; every child is ticked even after the
    threshold is met, because actions are atomic and synchronous.
    """

    z: int
    children: tuple = ()

    def tick(self, world: WorldPort) -> Status:
        successes = 0
        for child in self.children:
            if child.tick(world) is SUCCESS:
                successes += 1
        if self.children and successes >= self.z:
            return SUCCESS
        return FAILURE


Leaf = Union[Action, Condition]
Control = Union[Sequence, Fallback, Parallel]
BTNode = Union[Action, Condition, Sequence, Fallback, Parallel]

LEAF_TYPES = (Action, Condition)
CONTROL_TYPES = (Sequence, Fallback, Parallel)


def tick(tree: BTNode, world: WorldPort) -> Status:
    """Send one tick from the root of ``tree`` into ``world``."""
    return tree.tick(world)


def is_leaf(node: BTNode) -> bool:
    return isinstance(node, LEAF_TYPES)


def count_nodes(tree: BTNode) -> int:
    if isinstance(tree, LEAF_TYPES):
        return 1
    return 1 + sum(count_nodes(c) for c in tree.children)


def depth(tree: BTNode) -> int:
    if isinstance(tree, LEAF_TYPES) or not tree.children:
        return 1
    return 1 + max(depth(c) for c in tree.children)


def with_children(node: BTNode, children) -> BTNode:
    """Copy of a control node with its children replaced."""
    children = tuple(children)
    if isinstance(node, Parallel):
        return Parallel(node.z, children)
    return type(node)(children)


# Paths are tuples of child indices from the root; () is the root itself.

def iter_paths(tree: BTNode, prefix: tuple = ()) -> Iterator[tuple]:
    yield prefix
    if not isinstance(tree, LEAF_TYPES):
        for i, child in enumerate(tree.children):
            yield from iter_paths(child, prefix + (i,))


def get_subtree(tree: BTNode, path: tuple) -> BTNode:
    for i in path:
        tree = tree.children[i]
    return tree


def replace_subtree(tree: BTNode, path: tuple, new: Optional[BTNode]) -> BTNode:
    """Return ``tree`` with the node at ``path`` replaced by ``new``.

    Passing ``new=None`` deletes the node from its parent (path must be
    non-empty).
    """
    if not path:
        if new is None:
            raise ValueError("cannot delete the root")
        return new
    head, rest = path[0], path[1:]
    children = list(tree.children)
    if rest:
        children[head] = replace_subtree(children[head], rest, new)
    elif new is None:
        del children[head]
    else:
        children[head] = new
    return with_children(tree, children)


def insert_child(tree: BTNode, path: tuple, index: int, new: BTNode) -> BTNode:
    """Insert ``new`` as child ``index`` of the control node at ``path``."""
    parent = get_subtree(tree, path)
    children = list(parent.children)
    children.insert(index, new)
    return replace_subtree(tree, path, with_children(parent, children))


TABLES = ("table1", "table2", "table3", "goal")


@dataclass(frozen=True)
class SkillRegistry:
    """Maps action and condition identifiers to their parameter domain.

    A domain of ``None`` means the primitive takes no parameter; otherwise it
    is the tuple of legal parameter values.
    """

    actions: dict = field(default_factory=dict)
    conditions: dict = field(default_factory=dict)

    def __post_init__(self):
        clash = set(self.actions) & set(self.conditions)
        if clash:
            raise ValueError(f"identifiers used as both action and condition: {sorted(clash)}")

    def __hash__(self):
        return id(self)

    @classmethod
    def default(cls, tables=TABLES) -> "SkillRegistry":
        tables = tuple(tables)
        return cls(
            actions={
                "localise": None,
                "head_up": None,
                "head_down": None,
                "tuck": None,
                "pick": None,
                "place": None,
                "move_to": tables,
            },
            conditions={
                "have_cube": None,
                "cube_placed": tables,
                "task_done": None,
            },
        )

    def identifiers(self) -> list:
        return list(self.actions) + list(self.conditions)

    def leaves(self) -> list:
        """Expanded primitive set: one leaf per identifier and legal parameter."""
        out = []
        for kind, table in ((Action, self.actions), (Condition, self.conditions)):
            for name, domain in table.items():
                if domain is None:
                    out.append(kind(name))
                else:
                    out.extend(kind(name, p) for p in domain)
        return out

    def check_action(self, skill: str, param: Optional[str]) -> None:
        if skill not in self.actions:
            raise UnknownSkill(skill)
        _check_param(skill, param, self.actions[skill])

    def check_condition(self, check: str, param: Optional[str]) -> None:
        if check not in self.conditions:
            raise UnknownCondition(check)
        _check_param(check, param, self.conditions[check])


def _check_param(name, param, domain):
    if domain is None:
        if param is not None:
            raise UnexpectedParam(f"{name} takes no parameter, got {param!r}")
    elif param is None:
        raise MissingParam(f"{name} requires a parameter")
    elif param not in domain:
        raise UnexpectedParam(f"{name}: {param!r} not in {domain}")


def random_tree(
    rng: random.Random,
    registry: SkillRegistry,
    max_depth: int,
    allow_parallel: bool = False,
    p_control: float = 0.4,
    leaves: Optional[list] = None,
) -> BTNode:
    """Grow a random tree no deeper than ``max_depth``.

    Below the depth limit a node is a control node with probability
    ``p_control`` (2-4 children); leaves are uniform over the expanded
    primitive set.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    if leaves is None:
        leaves = registry.leaves()
    kinds = [Sequence, Fallback, Parallel] if allow_parallel else [Sequence, Fallback]

    def grow(d: int) -> BTNode:
        if d < max_depth and rng.random() < p_control:
            kind = rng.choice(kinds)
            children = tuple(grow(d + 1) for _ in range(rng.randint(2, 4)))
            if kind is Parallel:
                return Parallel(rng.randint(1, len(children)), children)
            return kind(children)
        return rng.choice(leaves)

    return grow(1)
