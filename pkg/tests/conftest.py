import pytest

_CRITERIA_KEY = pytest.StashKey[dict]()


class CriterionRecorder:
    """One pass/fail line per acceptance criterion; a test that dies early stays FAIL."""

    def __init__(self, store, number):
        self.store = store
        self.number = number
        store[number] = (False, "did not complete")

    def __call__(self, passed: bool, detail: str) -> bool:
        self.store[self.number] = (bool(passed), detail)
        return bool(passed)


def pytest_configure(config):
    config.stash[_CRITERIA_KEY] = {}


@pytest.fixture
def criterion(request):
    def make(number):
        return CriterionRecorder(request.config.stash[_CRITERIA_KEY], number)
    return make


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_CRITERIA_KEY, {})
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(results):
        passed, detail = results[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
