import json
from pathlib import Path

import pytest

from forumleak.model import (
    DAY, HOUR, PostRecord, PrivateMessage, ThreadRecord, UserRecord, make_dataset,
)

T0 = 1_300_000_000


def write_jsonl(path: Path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))


def tiny_forum():
    """Three users, two threads, a reply chain and a few messages."""
    users = [UserRecord("alice", "alice", T0 - DAY, 5), UserRecord("bob", "bob", T0 - DAY, 1),
             UserRecord("carol", "carol", T0 - DAY, 0)]
    threads = [ThreadRecord("t1", "market", "[S] fresh dumps", "alice", T0, 10),
               ThreadRecord("t2", "talk", "hello there", "bob", T0 + DAY, 3)]
    posts = [PostRecord("p1", "t1", "alice", T0, "selling dumps cheap"),
             PostRecord("p2", "t1", "bob", T0 + HOUR, "interested", "p1"),
             PostRecord("p3", "t1", "carol", T0 + 2 * HOUR, "me too", "p2"),
             PostRecord("p4", "t2", "bob", T0 + DAY, "hi all")]
    msgs = [PrivateMessage("m1", "bob", "alice", T0 + 1800),
            PrivateMessage("m2", "carol", "alice", T0 + 3 * HOUR),
            PrivateMessage("m3", "alice", "carol", T0 + 2 * DAY)]
    return make_dataset(users, threads, posts, msgs)


@pytest.fixture
def forum():
    return tiny_forum()


# criterion number -> (passed, detail), filled in by test_acceptance
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
