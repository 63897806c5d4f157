import pytest

_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per criterion; the lines are repeated in the summary."""
    def record(name: str, ok: bool, detail: str, status: str | None = None) -> bool:
        line = f"{status or ('PASS' if ok else 'FAIL')}  {name}: {detail}"
        print(line)
        _VERDICTS.append(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
