"""Shared pytest plumbing.

The acceptance tests register one verdict line per criterion; the summary
hook prints them at the end of the run so the whole gate is readable at a
glance regardless of how many individual tests ran.
"""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
