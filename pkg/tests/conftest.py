import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    lines = [value for report in terminalreporter.getreports("") + terminalreporter.getreports("passed")
             + terminalreporter.getreports("failed")
             for name, value in getattr(report, "user_properties", []) if name == "criterion"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(set(lines)):
            terminalreporter.write_line(line)
