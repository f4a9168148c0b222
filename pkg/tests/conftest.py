"""Shared pytest config: prints one PASS/FAIL line per acceptance criterion."""

import pytest

_ACCEPTANCE_RESULTS: dict[str, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    if "test_acceptance" not in item.nodeid:
        return
    label = getattr(item.function, "_criterion", None) or item.name
    _ACCEPTANCE_RESULTS[label] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for label, outcome in _ACCEPTANCE_RESULTS.items():
        terminalreporter.write_line(f"{outcome}: {label}")


def criterion(label):
    """Tag an acceptance test with its criterion label."""

    def mark(fn):
        fn._criterion = label
        return fn

    return mark
