import pytest

ACCEPTANCE = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    """Store a verdict line for the end-of-session acceptance summary."""
    ACCEPTANCE[criterion] = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


@pytest.fixture
def verdict():
    def check(criterion, ok, detail):
        record(criterion, bool(ok), detail)
        assert ok, detail

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
