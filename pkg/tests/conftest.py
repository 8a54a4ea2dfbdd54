import pytest

import spamsim as sp

# Populated by tests/test_acceptance.py; one verdict line per criterion is
# printed after the run so the gate is readable without scrolling the log.
ACCEPTANCE_RESULTS = {}
ACCEPTANCE_COUNT = 9


@pytest.fixture(scope="session")
def model():
    return sp.default_model()


@pytest.fixture(scope="session")
def perfect(model):
    return model.with_perfect_channels()


@pytest.fixture(scope="session")
def acceptance():
    def record(number, label, passed, detail=""):
        ACCEPTANCE_RESULTS[number] = (label, bool(passed))
        assert passed, f"criterion {number} ({label}): {detail or 'failed'}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, ACCEPTANCE_COUNT + 1):
        if number in ACCEPTANCE_RESULTS:
            label, passed = ACCEPTANCE_RESULTS[number]
            verdict = "PASS" if passed else "FAIL"
        else:
            label, verdict = "not reached", "FAIL"
        terminalreporter.write_line(f"[criterion {number}] {label}: {verdict}")
