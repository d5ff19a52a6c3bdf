import pytest

# criterion number -> (passed, detail), filled by the acceptance suite
ACCEPTANCE_RESULTS = {}


@pytest.fixture
def verdict(request):
    """Record the verdict of the test's acceptance criterion, then assert it."""
    n = request.node.get_closest_marker("criterion").args[0]
    ACCEPTANCE_RESULTS[n] = (False, "raised before reaching a verdict")

    def record(passed, detail):
        ACCEPTANCE_RESULTS[n] = (bool(passed), detail)
        assert passed, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
