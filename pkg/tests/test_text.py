import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evobt.bt import Action, Condition, Fallback, Parallel, Sequence, SkillRegistry, random_tree, tick
from evobt.text import ParseError, extract_tree, parse, parse_validated, serialize, validate
from evobt.world import SCENARIOS, SimWorld, init_world, get_profile


class TestParse:
    def test_sequence_of_actions(self):
        assert parse("(seq (act localise) (act move_to table1))") == Sequence(
            (Action("localise"), Action("move_to", "table1")))

    def test_parallel_with_threshold(self):
        assert parse("(par 2 (cond have_cube) (act pick))") == Parallel(
            2, (Condition("have_cube"), Action("pick")))

    def test_case_insensitive_and_whitespace(self):
        assert parse("  (SEQ\n\t(Act PICK)  (cond Cube_Placed GOAL))\n") == Sequence(
            (Action("pick"), Condition("cube_placed", "goal")))

    def test_empty_controls(self):
        assert parse("(seq)") == Sequence()
        assert parse("(fb)") == Fallback()
        assert parse("(par 1)") == Parallel(1)

    @pytest.mark.parametrize("text, code", [
        ("(seq (act pick)", "UnbalancedParen"),
        ("(seq (act pick)))", "UnbalancedParen"),
        ("", "UnbalancedParen"),
        ("(", "UnbalancedParen"),
        ("(loop (act pick))", "UnknownKind"),
        ("(par 0 (act pick))", "BadThreshold"),
        ("(par -1 (act pick))", "BadThreshold"),
        ("(par x (act pick))", "BadThreshold"),
        ("(par 01 (act pick))", "BadThreshold"),
        ("(act 9lives)", "BadToken"),
        ("(act)", "BadToken"),
        ("(act move_to table1 extra)", "BadToken"),
        ("(act (act pick))", "BadToken"),
        ("act pick", "BadToken"),
        ("(act pick) (act place)", "TrailingInput"),
        ("(act pick) trailing", "TrailingInput"),
    ])
    def test_error_codes(self, text, code):
        with pytest.raises(ParseError) as info:
            parse(text)
        assert info.value.code == code

    def test_error_position_points_into_text(self):
        text = "(seq (act pick)\n  (loop))"
        with pytest.raises(ParseError) as info:
            parse(text)
        assert info.value.code == "UnknownKind"
        assert info.value.position == (2, 4)


class TestSerialize:
    def test_leaf(self):
        assert serialize(Action("pick")) == "(act pick)"

    def test_parallel(self):
        assert serialize(Parallel(1, (Condition("task_done"),))) == "(par 1 (cond task_done))"

    def test_parameterized(self):
        assert serialize(Sequence((Action("move_to", "goal"), Sequence()))) == "(seq (act move_to goal) (seq))"

    def test_round_trip_random_trees(self, registry):
        rng = random.Random(11)
        for _ in range(1000):
            tree = random_tree(rng, registry, 5, allow_parallel=True)
            text = serialize(tree)
            assert parse(text) == tree
            assert serialize(parse(text)) == text


@settings(max_examples=300)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_round_trip_property(seed, allow_parallel):
    tree = random_tree(random.Random(seed), SkillRegistry.default(), 6, allow_parallel=allow_parallel)
    assert parse(serialize(tree)) == tree


class TestValidate:
    def test_unknown_skill(self, registry):
        report = validate(parse("(act fly)"), registry)
        assert [(v.code, v.severity) for v in report.violations] == [("UnknownSkill", "error")]
        assert not report.ok

    def test_registered_primitives_are_clean(self, registry):
        assert validate(parse("(seq (act localise) (act pick))"), registry).violations == []

    def test_threshold_out_of_range(self, registry):
        report = validate(parse("(par 3 (act pick) (act place))"), registry)
        assert report.codes() == ["ThresholdOutOfRange"]
        assert report.errors[0].path == ()

    def test_unknown_condition_and_bad_params(self, registry):
        tree = parse("(seq (cond is_raining) (act pick goal) (act move_to kitchen) (act move_to))")
        report = validate(tree, registry)
        assert report.codes() == ["UnknownCondition", "BadParam", "BadParam", "BadParam"]
        assert [v.path for v in report.violations] == [(0,), (1,), (2,), (3,)]

    def test_empty_control_is_only_a_warning(self, registry):
        report = validate(parse("(seq (fb) (act pick))"), registry)
        assert report.codes() == ["EmptyControl"]
        assert report.ok

    def test_validate_does_not_mutate(self, registry):
        tree = parse("(seq (act fly) (par 5 (act pick)))")
        before = serialize(tree)
        validate(tree, registry)
        assert serialize(tree) == before

    @settings(max_examples=100)
    @given(st.integers(0, 2**32 - 1))
    def test_valid_trees_tick_in_the_simulator(self, seed):
        registry = SkillRegistry.default()
        rng = random.Random(seed)
        tree = random_tree(rng, registry, 4, allow_parallel=True)
        assert validate(tree, registry).ok
        scenario = SCENARIOS["scenario2"]
        world = SimWorld(init_world(scenario, rng), scenario, get_profile("stoch3"), rng)
        tick(tree, world)

    def test_parse_validated(self, registry):
        tree, report = parse_validated("(act fly)", registry)
        assert tree == Action("fly") and report.codes() == ["UnknownSkill"]


class TestExtract:
    def test_code_fence(self):
        assert extract_tree("Here is the tree:\n```\n(seq (act pick))\n```") == "(seq (act pick))"

    def test_trailing_prose(self):
        assert extract_tree("(seq (act pick)) Hope this helps!") == "(seq (act pick))"

    def test_no_expression(self):
        with pytest.raises(ParseError) as info:
            extract_tree("I cannot help with that.")
        assert info.value.code == "BadToken"

    def test_parenthetical_prose_is_skipped(self):
        reply = "The robot (a mobile manipulator) should run:\n(fb (cond task_done) (act place))"
        assert extract_tree(reply) == "(fb (cond task_done) (act place))"

    def test_unbalanced_candidate_is_returned_for_the_parser(self):
        text = extract_tree("Tree: (seq (act pick)")
        with pytest.raises(ParseError) as info:
            parse(text)
        assert info.value.code == "UnbalancedParen"

    def test_unbalanced_inside_fence(self):
        text = extract_tree("```lisp\n(seq (act pick)\n```\nDone.")
        assert text == "(seq (act pick)"

    def test_invented_control_kind_is_not_unwrapped(self):
        with pytest.raises(ParseError) as info:
            parse(extract_tree("(loop (act pick) (act place))"))
        assert info.value.code == "UnknownKind"
