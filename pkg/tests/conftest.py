import pytest

from evobt.bt import SUCCESS, SkillRegistry, UnknownCondition, UnknownSkill
from evobt.text import parse

REFERENCE_S1 = (
    "(seq (act localise) (act move_to table1) (act head_down) (act pick)"
    " (act tuck) (act move_to goal) (act place))"
)


class ScriptedWorld:
    """WorldPort whose leaves return scripted statuses and record every call."""

    def __init__(self, outcomes=None, default=SUCCESS, registry=None):
        self.outcomes = dict(outcomes or {})
        self.default = default
        self.calls = []
        self.registry = registry

    def _status(self, name, param):
        key = name if param is None else f"{name}:{param}"
        self.calls.append(key)
        value = self.outcomes.get(key, self.default)
        if isinstance(value, list):
            return value.pop(0)
        return value

    def exec_action(self, skill, param=None):
        if self.registry is not None and skill not in self.registry.actions:
            raise UnknownSkill(skill)
        return self._status(skill, param)

    def eval_condition(self, check, param=None):
        if self.registry is not None and check not in self.registry.conditions:
            raise UnknownCondition(check)
        return self._status(check, param)


@pytest.fixture
def registry():
    return SkillRegistry.default()


@pytest.fixture
def reference_tree():
    return parse(REFERENCE_S1)


# -- acceptance reporting --------------------------------------------------

ACCEPTANCE_DETAILS = {}
_ACCEPTANCE_RESULTS = {}


def note(number, text):
    """Attach a measured value to an acceptance criterion's summary line."""
    ACCEPTANCE_DETAILS[number] = text


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, title = marker.args
        _ACCEPTANCE_RESULTS[number] = (title, report.outcome == "passed")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE_RESULTS):
        title, passed = _ACCEPTANCE_RESULTS[number]
        detail = ACCEPTANCE_DETAILS.get(number, "")
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
