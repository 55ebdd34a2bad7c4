import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ScriptedWorld
from evobt.bt import (
    FAILURE,
    SUCCESS,
    Action,
    Condition,
    Fallback,
    Parallel,
    Sequence,
    SkillRegistry,
    UnknownCondition,
    UnknownSkill,
    count_nodes,
    depth,
    random_tree,
    tick,
)
from evobt.text import validate


def leaves_with(statuses):
    """One Action per status, named a0, a1, ... with a scripted world."""
    children = tuple(Action(f"a{i}") for i in range(len(statuses)))
    world = ScriptedWorld({f"a{i}": s for i, s in enumerate(statuses)})
    return children, world


class TestTick:
    def test_empty_sequence_succeeds(self):
        assert tick(Sequence(), ScriptedWorld()) is SUCCESS

    def test_empty_fallback_and_parallel_fail(self):
        assert tick(Fallback(), ScriptedWorld()) is FAILURE
        assert tick(Parallel(1), ScriptedWorld()) is FAILURE

    def test_fallback_short_circuits_after_success(self):
        world = ScriptedWorld({"have_cube": FAILURE, "pick": SUCCESS})
        tree = Fallback((Condition("have_cube"), Action("pick")))
        assert tick(tree, world) is SUCCESS
        assert world.calls.count("pick") == 1

    def test_parallel_threshold(self):
        children, world = leaves_with([SUCCESS, FAILURE, SUCCESS])
        assert tick(Parallel(2, children), world) is SUCCESS
        assert world.calls == ["a0", "a1", "a2"]

    def test_parallel_ticks_every_child(self):
        children, world = leaves_with([SUCCESS, SUCCESS, FAILURE])
        assert tick(Parallel(1, children), world) is SUCCESS
        assert len(world.calls) == 3

    def test_sequence_stops_at_first_failure(self):
        children, world = leaves_with([SUCCESS, FAILURE, SUCCESS])
        assert tick(Sequence(children), world) is FAILURE
        assert world.calls == ["a0", "a1"]

    def test_condition_routes_to_eval_condition(self):
        world = ScriptedWorld({"cube_placed:goal": SUCCESS}, default=FAILURE)
        assert tick(Condition("cube_placed", "goal"), world) is SUCCESS

    def test_unknown_leaves_raise(self, registry):
        world = ScriptedWorld(registry=registry)
        with pytest.raises(UnknownSkill):
            tick(Action("fly"), world)
        with pytest.raises(UnknownCondition):
            tick(Sequence((Condition("is_raining"),)), world)

    def test_nested_depth_first_order(self):
        tree = Sequence((Fallback((Action("a"), Action("b"))), Sequence((Action("c"), Action("d")))))
        world = ScriptedWorld({"a": FAILURE})
        assert tick(tree, world) is SUCCESS
        assert world.calls == ["a", "b", "c", "d"]


status_vectors = st.lists(st.sampled_from([SUCCESS, FAILURE]), max_size=6)


class TestTickProperties:
    @given(status_vectors)
    def test_sequence_fallback_duality(self, statuses):
        children, world = leaves_with(statuses)
        assert (tick(Sequence(children), world) is SUCCESS) == all(s is SUCCESS for s in statuses)
        children, world = leaves_with(statuses)
        assert (tick(Fallback(children), world) is FAILURE) == all(s is FAILURE for s in statuses)

    @given(status_vectors)
    def test_short_circuit(self, statuses):
        children, world = leaves_with(statuses)
        tick(Sequence(children), world)
        first_fail = next((i for i, s in enumerate(statuses) if s is FAILURE), len(statuses) - 1)
        assert len(world.calls) == min(first_fail + 1, len(statuses))

        children, world = leaves_with(statuses)
        tick(Fallback(children), world)
        first_ok = next((i for i, s in enumerate(statuses) if s is SUCCESS), len(statuses) - 1)
        assert len(world.calls) == min(first_ok + 1, len(statuses))

    @given(st.lists(st.sampled_from([SUCCESS, FAILURE]), min_size=2, max_size=6), st.data())
    def test_parallel_monotone_in_threshold(self, statuses, data):
        z = data.draw(st.integers(2, len(statuses)))
        children, world = leaves_with(statuses)
        high = tick(Parallel(z, children), world)
        children, world = leaves_with(statuses)
        low = tick(Parallel(z - 1, children), world)
        if high is SUCCESS:
            assert low is SUCCESS


class TestCountNodes:
    def test_leaf(self):
        assert count_nodes(Action("pick")) == 1

    def test_flat_sequence(self):
        assert count_nodes(Sequence((Action("pick"),) * 3)) == 4

    def test_reference_tree(self, reference_tree):
        assert count_nodes(reference_tree) == 8

    @settings(max_examples=200)
    @given(st.integers(0, 2**32 - 1))
    def test_structural_induction(self, seed):
        tree = random_tree(random.Random(seed), SkillRegistry.default(), 4, allow_parallel=True)
        if isinstance(tree, (Action, Condition)):
            assert count_nodes(tree) == 1
        else:
            assert count_nodes(tree) == 1 + sum(count_nodes(c) for c in tree.children)


class TestRandomTree:
    def test_depth_one_is_a_leaf(self, registry):
        rng = random.Random(1)
        for _ in range(200):
            assert isinstance(random_tree(rng, registry, 1), (Action, Condition))

    @pytest.mark.parametrize("allow_parallel", [False, True])
    def test_always_valid_and_bounded(self, registry, allow_parallel):
        rng = random.Random(7)
        saw_parallel = False
        for _ in range(2000):
            tree = random_tree(rng, registry, 4, allow_parallel=allow_parallel)
            assert validate(tree, registry).violations == []
            assert depth(tree) <= 4
            saw_parallel |= _has_parallel(tree)
        assert saw_parallel == allow_parallel

    def test_leaf_distribution_uniform(self, registry):
        # chi-square against the uniform law over the 16 expanded primitives
        rng = random.Random(2024)
        counts = Counter()
        for _ in range(10_000):
            _collect_leaves(random_tree(rng, registry, 3), counts)
        expanded = registry.leaves()
        assert len(expanded) == 16
        assert set(counts) == set(expanded)
        total = sum(counts.values())
        for leaf in expanded:
            assert abs(counts[leaf] / total - 1 / 16) <= 0.03
        chi2 = sum((counts[leaf] - total / 16) ** 2 / (total / 16) for leaf in expanded)
        # 99.9th percentile of chi-square with 15 degrees of freedom
        assert chi2 < 37.70

    def test_rejects_bad_depth(self, registry):
        with pytest.raises(ValueError):
            random_tree(random.Random(0), registry, 0)


def _has_parallel(tree):
    if isinstance(tree, Parallel):
        return True
    return not isinstance(tree, (Action, Condition)) and any(_has_parallel(c) for c in tree.children)


def _collect_leaves(tree, counts):
    if isinstance(tree, (Action, Condition)):
        counts[tree] += 1
    else:
        for c in tree.children:
            _collect_leaves(c, counts)


class TestRegistry:
    def test_default_registry_skill_set(self, registry):
        assert set(registry.actions) == {"localise", "head_up", "head_down", "tuck", "pick", "place", "move_to"}
        assert set(registry.conditions) == {"have_cube", "cube_placed", "task_done"}

    def test_identifiers_unique_across_kinds(self):
        with pytest.raises(ValueError):
            SkillRegistry(actions={"x": None}, conditions={"x": None})
