"""Collects one PASS/FAIL line per acceptance criterion and prints them at the end."""

import pytest

_OUTCOMES: dict = {}
_DETAILS: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture
def report(request):
    """report(text) attaches measured values to the test's criterion line."""
    marker = request.node.get_closest_marker("criterion")

    def add(text):
        if marker is not None:
            _DETAILS.setdefault(marker.args[0], []).append(text)

    return add


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    # setup errors (e.g. a failing fixture) count; teardown does not
    if call.when == "teardown" or (call.when == "setup" and call.excinfo is None):
        return
    # an expected failure is still a failure of the criterion
    ok = call.excinfo is None
    n = marker.args[0]
    _OUTCOMES[n] = _OUTCOMES.get(n, True) and ok


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_OUTCOMES):
        status = "PASS" if _OUTCOMES[n] else "FAIL"
        detail = "; ".join(_DETAILS.get(n, []))
        terminalreporter.write_line(f"criterion {n:2d}: {status}" + (f"  ({detail})" if detail else ""))
