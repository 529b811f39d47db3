import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from helpers import CRITERION_LINES  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERION_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
