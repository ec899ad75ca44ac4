# acceptance verdicts, one line per criterion, echoed after the run
VERDICTS: list = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
