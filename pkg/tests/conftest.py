import pytest

CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    def _record(number: int, ok: bool, detail: str):
        CRITERIA[number] = (bool(ok), detail)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
