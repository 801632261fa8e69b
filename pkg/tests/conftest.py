import pytest

# (number, name, passed, detail) rows recorded by the acceptance tests
ACCEPTANCE = []


@pytest.fixture
def record_criterion():
    def record(number, name, passed, detail):
        ACCEPTANCE.append((number, name, passed, detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} [{number}] {name}: {detail}")
