"""Collects one verdict line per acceptance criterion and prints them at the end of the run."""

VERDICTS = []


def record(criterion, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'}  criterion {criterion}: {detail}"
    VERDICTS.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
