import pytest

_ACCEPTANCE: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion and return the flag."""

    def record(criterion: str, ok: bool, detail: str) -> bool:
        line = f"{criterion}: {'PASS' if ok else 'FAIL'} ({detail})"
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
