"""Shared test plumbing.

test_acceptance.py registers one line per criterion here; the terminal
summary hook prints them after the run so the verdicts are visible even
with captured stdout.
"""
from __future__ import annotations

ACCEPTANCE_LINES: list[tuple[int, str, bool, str]] = []


def record_criterion(number: int, name: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE_LINES.append((number, name, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(ACCEPTANCE_LINES):
        verdict = "PASS" if passed else "FAIL"
        suffix = f"  [{detail}]" if detail else ""
        terminalreporter.write_line(f"criterion {number:2d} {name:<42s} {verdict}{suffix}")
