from __future__ import annotations

import pytest

# Acceptance results are reported as one explicit line per criterion at the
# end of the run so a reviewer can scan the gate without reading tracebacks.
_acceptance_results: dict[str, bool] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    if item.fspath.basename != "test_acceptance.py":
        return
    doc = item.function.__doc__ or item.name
    label = doc.strip().splitlines()[0]
    _acceptance_results[label] = report.passed


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for label, passed in _acceptance_results.items():
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {label}")
