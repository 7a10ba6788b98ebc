from __future__ import annotations

import functools

import pytest

from gacl.harness import ExperimentResult, ExperimentSpec, run_experiment


@functools.cache
def _default_run(name: str) -> ExperimentResult:
    return run_experiment(ExperimentSpec(name, master_seed=42))


@pytest.fixture(scope="session")
def default_run():
    """Full-size experiment at seed 42, computed once per session."""
    return _default_run


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def report():
    """Record one acceptance verdict; the terminal summary lists them all."""

    def record(number: int, ok: bool, detail: str) -> None:
        ACCEPTANCE[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 12):
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:>2}: NOT RUN")
