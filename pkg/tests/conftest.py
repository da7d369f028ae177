"""Fixtures plus a terminal section that prints one verdict line per acceptance check."""

import numpy as np
import pytest

from rotorarm import DroneModel, build_catalog

_NOTES: dict[str, str] = {}
_RESULTS: dict[str, str] = {}


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0x5EED)


@pytest.fixture(scope="session")
def octa_model() -> DroneModel:
    return DroneModel(build_catalog("octahedron_rot"))


@pytest.fixture
def note(request):
    """Let an acceptance test attach a measurement summary to its verdict line."""

    def _note(message: str) -> None:
        _NOTES[request.node.nodeid] = message

    return _note


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    if report.when == "call" and item.name.startswith("test_criterion_"):
        _RESULTS[item.nodeid] = report.outcome
    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid in sorted(_RESULTS):
        verdict = "PASS" if _RESULTS[nodeid] == "passed" else "FAIL"
        label = nodeid.split("::")[-1].removeprefix("test_")
        detail = _NOTES.get(nodeid)
        line = f"{verdict} {label}" + (f": {detail}" if detail else "")
        terminalreporter.write_line(line)
