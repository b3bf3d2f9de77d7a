"""Prints one line per acceptance criterion at the end of the run."""

import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, name): numbered acceptance criterion")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, name = marker.args
        detail = dict(report.user_properties).get("measured", "")
        item.config._criteria[number] = (name, report.outcome, detail)


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, "_criteria", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        name, outcome, detail = results[number]
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {status}  {name}  {detail}".rstrip())
