import pytest

_RESULTS = {}


@pytest.fixture
def criterion():
    """report(number, ok, detail) records one acceptance line and fails the test if not ok."""

    def report(number, ok, detail):
        _RESULTS.setdefault(number, []).append((bool(ok), detail))
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, f"criterion {number}: {detail}"

    return report


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        parts = _RESULTS[number]
        ok = all(p[0] for p in parts)
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}")
        for good, detail in parts:
            terminalreporter.write_line(f"    {'ok  ' if good else 'FAIL'} {detail}")
