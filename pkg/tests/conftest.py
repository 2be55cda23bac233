"""Prints one line per acceptance criterion at the end of the run."""

import pytest

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            num, title = mark.args
            _criteria[item.nodeid] = {"num": num, "title": title, "outcome": "not run", "measured": ""}


@pytest.hookimpl(trylast=True)
def pytest_runtest_logreport(report):
    entry = _criteria.get(report.nodeid)
    if entry is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        entry["outcome"] = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
    for key, value in report.user_properties:
        if key == "measured":
            entry["measured"] = value


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for entry in sorted(_criteria.values(), key=lambda e: e["num"]):
        line = f"criterion {entry['num']}: {entry['outcome']:4s}  {entry['title']}"
        if entry["measured"]:
            line += f"  [{entry['measured']}]"
        terminalreporter.write_line(line)
