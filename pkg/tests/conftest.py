import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

# acceptance verdicts, filled by tests/test_acceptance.py
VERDICTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        ok, title, notes = VERDICTS[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {title}")
        for note in notes:
            terminalreporter.write_line(f"    {note}")


class Criterion:
    """Collects the sub-checks of one acceptance criterion."""

    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.notes: list = []
        self.ok = True
        self.done = False

    def check(self, cond, message: str) -> bool:
        cond = bool(cond)
        self.ok &= cond
        self.notes.append(f"[{'ok' if cond else 'FAIL'}] {message}")
        return cond

    def info(self, message: str):
        self.notes.append(f"[info] {message}")

    def finish(self):
        self.done = True
        VERDICTS[self.number] = (self.ok, self.title, self.notes)
        assert self.ok, "\n".join(self.notes)


@pytest.fixture
def criterion():
    made = []

    def make(number: int, title: str) -> Criterion:
        c = Criterion(number, title)
        made.append(c)
        return c

    yield make
    for c in made:
        if not c.done:
            VERDICTS[c.number] = (False, c.title, c.notes + ["[FAIL] stopped by an exception"])
