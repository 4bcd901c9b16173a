import pytest

_RESULTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record a one-line PASS/FAIL verdict for an acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(_RESULTS, [])

    def record(criterion: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_RESULTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
