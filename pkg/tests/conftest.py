from __future__ import annotations

from dataclasses import replace

import pytest

from cmgems.config import bundle_path, load_config
from cmgems.sim import run

CRITERIA = {
    1: "periodic round count",
    2: "scenario dominance",
    3: "aperiodic savings",
    4: "storage estimators",
    5: "block policy",
    6: "reconfiguration oracle",
    7: "market clearing",
    8: "trigger math",
    9: "delay sensitivity",
    10: "switchnet",
}

_criterion_of: dict[str, int] = {}
_outcomes: dict[int, list[bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion the test belongs to")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _criterion_of[item.nodeid] = mark.args[0]


def pytest_runtest_logreport(report):
    n = _criterion_of.get(report.nodeid)
    if n is None:
        return
    if report.when == "call" or report.failed or report.skipped:
        _outcomes.setdefault(n, []).append(report.passed and report.when == "call")


def pytest_terminal_summary(terminalreporter):
    if not _criterion_of:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        results = _outcomes.get(n)
        if not results:
            status = "NOT RUN"
        else:
            status = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"criterion {n:>2} {status:<7} {title} ({len(results or [])} tests)")


class Bundle:
    """Reference-bundle runs cached per (day, overrides) for the whole session."""

    def __init__(self):
        self._scenarios = {}
        self._reports = {}

    def scenario(self, day: str = "weekday"):
        if day not in self._scenarios:
            self._scenarios[day] = load_config(bundle_path(day))
        return self._scenarios[day]

    def run(self, day: str = "weekday", **overrides):
        key = (day, tuple(sorted((k, repr(v)) for k, v in overrides.items())))
        if key not in self._reports:
            sc = self.scenario(day)
            self._reports[key] = run(replace(sc.config, **overrides), sc.profiles, sc.graph)
        return self._reports[key]


@pytest.fixture(scope="session")
def bundle() -> Bundle:
    return Bundle()
