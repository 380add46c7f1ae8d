import pytest

_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL/SKIP line for an acceptance criterion and assert it."""
    lines = request.config.stash.setdefault(_KEY, [])

    def record(number, title, ok, detail, skipped=False):
        status = "SKIP" if skipped else ("PASS" if ok else "FAIL")
        line = f"[{status}] criterion {number:>2}: {title} | {detail}"
        lines.append(line)
        print(line)
        if skipped:
            pytest.skip(detail)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
