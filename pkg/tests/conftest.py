import sys


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.LINES:
        return
    terminalreporter.section("acceptance")
    for line in sorted(mod.LINES, key=lambda s: int(s.split()[1])):
        terminalreporter.write_line(line)
