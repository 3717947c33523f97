import pytest

# (criterion, passed, detail) lines from test_acceptance, printed at the end
ACCEPTANCE_LINES: list[tuple[str, bool, str]] = []


@pytest.fixture
def verdict():
    def record(name: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.append((name, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(ACCEPTANCE_LINES, key=lambda r: int(r[0].split()[0])):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {name}: {detail}")
