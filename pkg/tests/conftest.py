import pytest

ACCEPTANCE = {}


class CriterionLog:
    """Sub-checks of one acceptance criterion, shown in the terminal summary."""

    def __init__(self, number, title):
        self.number, self.title, self.checks = number, title, []

    def check(self, label, ok, detail=""):
        self.checks.append((label, bool(ok), detail))

    @property
    def passed(self):
        return bool(self.checks) and all(ok for _, ok, _ in self.checks)

    def verify(self):
        failed = [f"{label} ({detail})" for label, ok, detail in self.checks if not ok]
        assert not failed, "; ".join(failed)


@pytest.fixture
def criterion():
    def make(number, title):
        ACCEPTANCE[number] = CriterionLog(number, title)
        return ACCEPTANCE[number]
    return make


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        log = ACCEPTANCE[number]
        tr.write_line(f"{'PASS' if log.passed else 'FAIL'}  {number}. {log.title}")
        for label, ok, detail in log.checks:
            tr.write_line(f"        [{'ok' if ok else 'x '}] {label}: {detail}")
