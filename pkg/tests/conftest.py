import os
import sys

sys.path.insert(0, os.path.dirname(__file__))


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, in criterion order."""
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            name = rep.nodeid.rpartition("::")[2]
            if "test_acceptance.py" not in rep.nodeid or not name.startswith("test_criterion_"):
                continue
            if rep.when != "call" and outcome != "error":
                continue
            number = int(name.split("_")[2])
            detail = dict(rep.user_properties).get("detail", "")
            verdict = "PASS" if outcome == "passed" else "FAIL"
            lines[number] = f"criterion {number:>2}: {verdict}  {detail}".rstrip()
    if lines:
        terminalreporter.section("acceptance")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
