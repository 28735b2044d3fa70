import os
import re
import sys

sys.path.insert(0, os.path.dirname(__file__))

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, with the measured numbers."""
    rows = {}
    for outcome in ("passed", "failed", "error", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = _CRITERION.search(getattr(rep, "nodeid", ""))
            if not m:
                continue
            num, name = int(m.group(1)), m.group(2).replace("_", " ")
            if rep.when == "call" or outcome != "passed":
                detail = dict(getattr(rep, "user_properties", [])).get("detail", "")
                status = "PASS" if outcome == "passed" else outcome.upper().replace("FAILED", "FAIL")
                rows[num] = (name, "FAIL" if outcome in ("failed", "error") else status, detail)
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(rows):
        name, status, detail = rows[num]
        line = f"criterion {num:2d} {status:4s}  {name}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
