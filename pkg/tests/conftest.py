import datetime as dt

import pytest

from behaviorimg.ingest import EventKind, EventRecord

ACCEPTANCE_LINES: list[str] = []


def at(hhmm: str, day: dt.date = dt.date(2010, 1, 4)) -> dt.datetime:
    parts = [int(p) for p in hhmm.split(":")]
    while len(parts) < 3:
        parts.append(0)
    return dt.datetime.combine(day, dt.time(*parts))


_counter = iter(range(10**9))


def event(kind: EventKind, hhmm: str, pc: str = "PC-1", user: str = "AAA0001", day=dt.date(2010, 1, 4), **payload):
    return EventRecord(f"{{E{next(_counter):08d}}}", at(hhmm, day), user, pc, kind, **payload)


@pytest.fixture
def acceptance_log():
    def record(criterion: str, passed: bool | None, detail: str) -> None:
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        ACCEPTANCE_LINES.append(f"[{status}] criterion {criterion}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
