"""Leak data model: record types, JSONL loading/export, time slicing."""

from __future__ import annotations

import json
import os
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Optional

from forumleak import DataError

USERS_FILE = "users.jsonl"
THREADS_FILE = "threads.jsonl"
POSTS_FILE = "posts.jsonl"
PMS_FILE = "pms.jsonl"

HOUR = 3600
DAY = 86400
WEEK = 7 * DAY


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    username: str
    join_ts: int
    reputation: int = 0


@dataclass(frozen=True)
class ThreadRecord:
    thread_id: str
    subforum: str
    title: str
    creator_id: str
    created_ts: int
    views: int = 0


@dataclass(frozen=True)
class PostRecord:
    """A public post. Thread-starting posts have ``reply_to`` set to None and
    ``ts`` equal to the thread's creation time."""

    post_id: str
    thread_id: str
    author_id: str
    ts: int
    body: str = ""
    reply_to: Optional[str] = None


@dataclass(frozen=True)
class PrivateMessage:
    msg_id: str
    sender_id: str
    recipient_id: str
    ts: int
    body: str = ""


@dataclass(frozen=True)
class TimeWindow:
    """Half-open interval ``[start, start + duration)`` in Unix seconds."""

    start: int
    duration: int

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError(f"window duration must be positive, got {self.duration}")

    @property
    def end(self) -> int:
        return self.start + self.duration

    def contains(self, ts: int) -> bool:
        return self.start <= ts < self.end

    def intersect(self, other: "TimeWindow") -> Optional["TimeWindow"]:
        lo, hi = max(self.start, other.start), min(self.end, other.end)
        if hi <= lo:
            return None
        return TimeWindow(lo, hi - lo)

    @classmethod
    def covering(cls, dataset: "ForumDataset") -> "TimeWindow":
        if dataset.span is None:
            raise DataError("cannot build a window over an empty dataset")
        lo, hi = dataset.span
        return cls(lo, hi - lo + 1)


@dataclass
class LoadReport:
    strict: bool
    loaded: dict = field(default_factory=dict)
    dropped: dict = field(default_factory=dict)
    missing_fields: dict = field(default_factory=dict)
    repaired: dict = field(default_factory=dict)

    @property
    def total_dropped(self) -> int:
        return sum(self.dropped.values())

    def to_json(self) -> str:
        payload = asdict(self)
        payload["total_dropped"] = self.total_dropped
        return json.dumps(payload, indent=2, sort_keys=True)


@dataclass(frozen=True)
class ForumDataset:
    users: tuple = ()
    threads: tuple = ()
    posts: tuple = ()
    messages: tuple = ()

    @cached_property
    def span(self) -> Optional[tuple]:
        stamps = [p.ts for p in self.posts] + [m.ts for m in self.messages]
        if not stamps:
            return None
        return (min(stamps), max(stamps))

    @property
    def is_empty(self) -> bool:
        return not (self.users or self.threads or self.posts or self.messages)

    @cached_property
    def user_index(self) -> dict:
        return {u.user_id: u for u in self.users}

    @cached_property
    def thread_index(self) -> dict:
        return {t.thread_id: t for t in self.threads}

    @cached_property
    def posts_by_thread(self) -> dict:
        out = defaultdict(list)
        for p in self.posts:
            out[p.thread_id].append(p)
        return dict(out)

    @cached_property
    def start_posts(self) -> dict:
        """thread_id -> the thread-starting post."""
        out = {}
        for tid, posts in self.posts_by_thread.items():
            thread = self.thread_index.get(tid)
            if thread is None:
                continue
            for p in posts:
                if _is_start_post(p, thread):
                    out[tid] = p
                    break
        return out

    def thread_starts(self) -> list:
        """Thread-starting posts ordered by time."""
        return sorted(self.start_posts.values(), key=lambda p: (p.ts, p.post_id))

    @cached_property
    def inbox(self) -> dict:
        """recipient_id -> sorted list of received message timestamps."""
        out = defaultdict(list)
        for m in self.messages:
            out[m.recipient_id].append(m.ts)
        return {k: sorted(v) for k, v in out.items()}

    def public_view(self) -> "ForumDataset":
        """The same dataset with every private message removed."""
        return ForumDataset(self.users, self.threads, self.posts, ())


def _is_start_post(post: PostRecord, thread: ThreadRecord) -> bool:
    return (
        post.reply_to is None
        and post.ts == thread.created_ts
        and post.author_id == thread.creator_id
    )


def _read_jsonl(path: Path) -> Iterator[tuple]:
    if not path.exists():
        return
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path.name}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DataError(f"{path.name}:{lineno}: expected a JSON object")
            yield lineno, obj


def _ts(value, where: str) -> int:
    try:
        return int(float(value))
    except (TypeError, ValueError) as exc:
        raise DataError(f"{where}: bad timestamp {value!r}") from exc


def _require(obj: dict, key: str, where: str):
    if key not in obj or obj[key] is None:
        raise DataError(f"{where}: missing required field {key!r}")
    return obj[key]


def _count_field(obj: dict, key: str, report: LoadReport, kind: str) -> int:
    value = obj.get(key)
    if value is None:
        k = f"{kind}.{key}"
        report.missing_fields[k] = report.missing_fields.get(k, 0) + 1
        return 0
    return int(value)


def _resolve_paths(paths) -> dict:
    if isinstance(paths, (str, os.PathLike)):
        root = Path(paths)
        return {
            "users": root / USERS_FILE,
            "threads": root / THREADS_FILE,
            "posts": root / POSTS_FILE,
            "pms": root / PMS_FILE,
        }
    return {k: Path(v) for k, v in paths.items()}


def load_dataset(paths, strict: bool = False) -> tuple:
    """Load and validate a leak from JSONL files.

    ``paths`` is either a directory holding ``users.jsonl``, ``threads.jsonl``,
    ``posts.jsonl`` and ``pms.jsonl``, or a mapping with keys ``users``,
    ``threads``, ``posts``, ``pms``. Missing files are read as empty.

    Returns ``(dataset, report)``. In strict mode a referential violation
    raises :class:`DataError`; otherwise the offending record is dropped and
    counted in the report.
    """
    files = _resolve_paths(paths)
    report = LoadReport(strict=strict)

    def violation(kind: str, msg: str):
        if strict:
            raise DataError(msg)
        report.dropped[kind] = report.dropped.get(kind, 0) + 1

    users = {}
    for lineno, obj in _read_jsonl(files["users"]):
        where = f"users:{lineno}"
        uid = str(_require(obj, "user_id", where))
        if uid in users:
            violation("users", f"{where}: duplicate user_id {uid!r}")
            continue
        users[uid] = UserRecord(
            user_id=uid,
            username=str(obj.get("username") or ""),
            join_ts=_ts(_require(obj, "join_ts", where), where),
            reputation=_count_field(obj, "reputation", report, "users"),
        )

    threads = {}
    for lineno, obj in _read_jsonl(files["threads"]):
        where = f"threads:{lineno}"
        tid = str(_require(obj, "thread_id", where))
        creator = str(_require(obj, "creator_id", where))
        if tid in threads:
            violation("threads", f"{where}: duplicate thread_id {tid!r}")
            continue
        if creator not in users:
            violation("threads", f"{where}: unknown creator {creator!r}")
            continue
        threads[tid] = ThreadRecord(
            thread_id=tid,
            subforum=str(obj.get("subforum") or ""),
            title=str(obj.get("title") or ""),
            creator_id=creator,
            created_ts=_ts(_require(obj, "created_ts", where), where),
            views=_count_field(obj, "views", report, "threads"),
        )

    raw_posts = []
    for lineno, obj in _read_jsonl(files["posts"]):
        where = f"posts:{lineno}"
        reply_to = obj.get("reply_to")
        raw_posts.append(
            (
                where,
                PostRecord(
                    post_id=str(_require(obj, "post_id", where)),
                    thread_id=str(_require(obj, "thread_id", where)),
                    author_id=str(_require(obj, "author_id", where)),
                    ts=_ts(_require(obj, "ts", where), where),
                    body=str(obj.get("body") or ""),
                    reply_to=None if reply_to is None else str(reply_to),
                ),
            )
        )
    # dumps are not guaranteed to be time ordered
    raw_posts.sort(key=lambda wp: (wp[1].ts, wp[1].post_id))

    posts = {}
    for where, p in raw_posts:
        if p.post_id in posts:
            violation("posts", f"{where}: duplicate post_id {p.post_id!r}")
            continue
        thread = threads.get(p.thread_id)
        if thread is None:
            violation("posts", f"{where}: unknown thread {p.thread_id!r}")
            continue
        if p.author_id not in users:
            violation("posts", f"{where}: unknown author {p.author_id!r}")
            continue
        if p.ts < thread.created_ts:
            violation("posts", f"{where}: post predates its thread")
            continue
        if p.reply_to is not None:
            parent = posts.get(p.reply_to)
            if parent is None or parent.thread_id != p.thread_id or parent.ts > p.ts:
                violation("posts", f"{where}: reply_to {p.reply_to!r} is not an earlier post in the thread")
                continue
        posts[p.post_id] = p

    started = {p.thread_id for p in posts.values() if _is_start_post(p, threads[p.thread_id])}
    for tid, thread in threads.items():
        if tid not in started:
            pid = f"{tid}:start"
            while pid in posts:
                pid += "_"
            posts[pid] = PostRecord(pid, tid, thread.creator_id, thread.created_ts, "", None)
            report.repaired["synthesized_start_posts"] = report.repaired.get("synthesized_start_posts", 0) + 1

    messages = {}
    for lineno, obj in _read_jsonl(files["pms"]):
        where = f"pms:{lineno}"
        m = PrivateMessage(
            msg_id=str(_require(obj, "msg_id", where)),
            sender_id=str(_require(obj, "sender_id", where)),
            recipient_id=str(_require(obj, "recipient_id", where)),
            ts=_ts(_require(obj, "ts", where), where),
            body=str(obj.get("body") or ""),
        )
        if m.msg_id in messages:
            violation("pms", f"{where}: duplicate msg_id {m.msg_id!r}")
            continue
        if m.sender_id not in users or m.recipient_id not in users:
            violation("pms", f"{where}: unknown sender or recipient")
            continue
        if m.sender_id == m.recipient_id:
            violation("pms", f"{where}: sender equals recipient")
            continue
        messages[m.msg_id] = m

    # join_ts must not follow the user's first activity; clamp it
    first_seen = {}
    for p in posts.values():
        first_seen[p.author_id] = min(first_seen.get(p.author_id, p.ts), p.ts)
    for m in messages.values():
        for uid in (m.sender_id, m.recipient_id):
            first_seen[uid] = min(first_seen.get(uid, m.ts), m.ts)
    for uid, ts in first_seen.items():
        u = users[uid]
        if u.join_ts > ts:
            users[uid] = UserRecord(u.user_id, u.username, ts, u.reputation)
            report.repaired["join_ts_clamped"] = report.repaired.get("join_ts_clamped", 0) + 1

    dataset = make_dataset(users.values(), threads.values(), posts.values(), messages.values())
    report.loaded = {
        "users": len(dataset.users),
        "threads": len(dataset.threads),
        "posts": len(dataset.posts),
        "messages": len(dataset.messages),
    }
    return dataset, report


def make_dataset(users: Iterable, threads: Iterable, posts: Iterable, messages: Iterable) -> ForumDataset:
    """Assemble a dataset with every collection in canonical time order."""
    return ForumDataset(
        users=tuple(sorted(users, key=lambda u: (u.join_ts, u.user_id))),
        threads=tuple(sorted(threads, key=lambda t: (t.created_ts, t.thread_id))),
        posts=tuple(sorted(posts, key=lambda p: (p.ts, p.post_id))),
        messages=tuple(sorted(messages, key=lambda m: (m.ts, m.msg_id))),
    )


def _dump(records, path: Path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(asdict(r), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def export_dataset(dataset: ForumDataset, directory) -> None:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    _dump(dataset.users, root / USERS_FILE)
    _dump(dataset.threads, root / THREADS_FILE)
    _dump(dataset.posts, root / POSTS_FILE)
    _dump(dataset.messages, root / PMS_FILE)


def slice_dataset(dataset: ForumDataset, window: TimeWindow) -> ForumDataset:
    """Restrict posts, threads and messages to ``window``.

    Users are kept wholesale. A thread survives when its starting post lies
    in the window; posts survive when they lie in the window and belong to a
    surviving thread.
    """
    starts = dataset.start_posts
    keep_threads = {
        t.thread_id
        for t in dataset.threads
        if t.thread_id in starts and window.contains(starts[t.thread_id].ts)
    }
    return ForumDataset(
        users=dataset.users,
        threads=tuple(t for t in dataset.threads if t.thread_id in keep_threads),
        posts=tuple(p for p in dataset.posts if p.thread_id in keep_threads and window.contains(p.ts)),
        messages=tuple(m for m in dataset.messages if window.contains(m.ts)),
    )


def dataset_summary(dataset: ForumDataset) -> dict:
    pm_users = set()
    for m in dataset.messages:
        pm_users.add(m.sender_id)
        pm_users.add(m.recipient_id)
    span = dataset.span
    return {
        "users": len(dataset.users),
        "users_with_pms": len(pm_users),
        "threads": len(dataset.threads),
        "posts": len(dataset.posts),
        "messages": len(dataset.messages),
        "span": list(span) if span else None,
        "empty": span is None,
    }


def record_multiset(dataset: ForumDataset) -> Counter:
    """Multiset of all records, used to compare datasets irrespective of order."""
    return Counter(list(dataset.users) + list(dataset.threads) + list(dataset.posts) + list(dataset.messages))
