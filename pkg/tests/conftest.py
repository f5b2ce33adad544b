import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(autouse=True)
def _single_worker(monkeypatch):
    monkeypatch.setenv("MG_THREADS", "1")


@pytest.fixture
def record():
    def _record(criterion: str, ok: bool, detail: str = ""):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
