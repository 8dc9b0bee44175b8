"""Per-criterion PASS/FAIL reporting for the acceptance suite.

Tests tagged ``@pytest.mark.criterion(n, title)`` are collected into a table
printed at the end of the run; a test may attach a measured value with the
``measured`` fixture.
"""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.fixture
def measured(request):
    marker = request.node.get_closest_marker("criterion")
    details = []

    def record(text):
        details.append(text)
        if marker is not None:
            _RESULTS.setdefault(marker.args[0], {})["detail"] = "; ".join(details)
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker.args
    entry = _RESULTS.setdefault(number, {})
    entry["title"] = title
    passed = report.passed and entry.get("status", "PASS") == "PASS"
    entry["status"] = "PASS" if passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        entry = _RESULTS[number]
        line = f"criterion {number:2d} {entry.get('status', 'FAIL')}: {entry.get('title', '?')}"
        if entry.get("detail"):
            line += f" [{entry['detail']}]"
        terminalreporter.write_line(line)
