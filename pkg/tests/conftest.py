"""Collects acceptance verdicts and prints one PASS/FAIL line per criterion."""

import pytest

_VERDICTS = {}


@pytest.fixture
def verdict(request):
    """``verdict(criterion, passed, detail)`` records a result; the caller still asserts."""

    def record(criterion: int, passed: bool, detail: str = ""):
        _VERDICTS.setdefault(criterion, []).append((bool(passed), request.node.name, detail))
        print(f"{'PASS' if passed else 'FAIL'} criterion {criterion} [{request.node.name}] {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_VERDICTS):
        parts = _VERDICTS[criterion]
        ok = all(p for p, _, _ in parts)
        names = ", ".join(f"{n}{'' if p else ' (failed)'}" for p, n, _ in parts)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {names}")
        for p, n, detail in parts:
            if detail:
                terminalreporter.write_line(f"    {n}: {detail}")
