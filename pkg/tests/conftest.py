"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""

_outcomes = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if report.when == "call" or report.failed or report.skipped:
        prev = _outcomes.get(name)
        if prev != "FAIL":
            _outcomes[name] = "FAIL" if report.failed else "SKIP" if report.skipped else "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    from test_acceptance import CRITERIA

    terminalreporter.section("acceptance criteria")
    for i, (name, label) in enumerate(CRITERIA.items(), 1):
        terminalreporter.write_line(f"{_outcomes.get(name, 'NOT RUN'):7s} {i:2d}  {label}")
