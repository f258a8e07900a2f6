"""Prints the acceptance criterion results in the terminal summary (after
capture ends) so `pytest -v` always shows one line per criterion."""
import _acceptance_report


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_report.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in _acceptance_report.RESULTS:
        terminalreporter.write_line(line)
