import os
import re
import sys

sys.path.insert(0, os.path.dirname(__file__))

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def _natural(label):
    head = re.match(r"\d+", label)
    return int(head.group()), label


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE, key=_natural):
        passed, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if passed else 'FAIL'}  {detail}")
