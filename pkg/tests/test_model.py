import json

import pytest

from forumleak import DataError
from forumleak.model import (
    DAY, HOUR, TimeWindow, dataset_summary, export_dataset, load_dataset, record_multiset, slice_dataset,
)

from conftest import T0, tiny_forum, write_jsonl


def test_round_trip_preserves_records(tmp_path, forum):
    export_dataset(forum, tmp_path)
    loaded, report = load_dataset(tmp_path, strict=True)
    assert record_multiset(loaded) == record_multiset(forum)
    assert report.total_dropped == 0
    assert report.loaded == {"users": 3, "threads": 2, "posts": 4, "messages": 3}


def test_summary_counts(forum):
    s = dataset_summary(forum)
    assert (s["users"], s["users_with_pms"], s["threads"], s["posts"], s["messages"]) == (3, 3, 2, 4, 3)
    assert s["span"] == [T0, T0 + 2 * DAY]


def test_start_posts_and_inbox(forum):
    assert [p.post_id for p in forum.thread_starts()] == ["p1", "p4"]
    assert forum.inbox["alice"] == [T0 + 1800, T0 + 3 * HOUR]
    assert forum.public_view().messages == ()


def _dump_dir(tmp_path, users, threads, posts, pms):
    write_jsonl(tmp_path / "users.jsonl", users)
    write_jsonl(tmp_path / "threads.jsonl", threads)
    write_jsonl(tmp_path / "posts.jsonl", posts)
    write_jsonl(tmp_path / "pms.jsonl", pms)
    return tmp_path


def _base():
    users = [{"user_id": "a", "username": "a", "join_ts": T0}, {"user_id": "b", "username": "b", "join_ts": T0}]
    threads = [{"thread_id": "t", "subforum": "s", "title": "x", "creator_id": "a", "created_ts": T0 + 10}]
    posts = [{"post_id": "p", "thread_id": "t", "author_id": "a", "ts": T0 + 10}]
    return users, threads, posts


def test_lenient_drops_orphans_and_counts_them(tmp_path):
    users, threads, posts = _base()
    pms = [{"msg_id": "m1", "sender_id": "b", "recipient_id": "a", "ts": T0 + 20},
           {"msg_id": "m2", "sender_id": "ghost", "recipient_id": "a", "ts": T0 + 30}]
    d = _dump_dir(tmp_path, users, threads, posts, pms)
    ds, report = load_dataset(d)
    assert [m.msg_id for m in ds.messages] == ["m1"]
    assert report.dropped == {"pms": 1}


def test_strict_raises_on_orphans(tmp_path):
    users, threads, posts = _base()
    posts.append({"post_id": "q", "thread_id": "nope", "author_id": "a", "ts": T0 + 50})
    d = _dump_dir(tmp_path, users, threads, posts, [])
    with pytest.raises(DataError):
        load_dataset(d, strict=True)


def test_malformed_json_always_raises(tmp_path):
    users, threads, posts = _base()
    d = _dump_dir(tmp_path, users, threads, posts, [])
    (d / "pms.jsonl").write_text("{not json\n")
    with pytest.raises(DataError):
        load_dataset(d)


def test_missing_start_post_is_synthesized(tmp_path):
    users, threads, _ = _base()
    posts = [{"post_id": "r", "thread_id": "t", "author_id": "b", "ts": T0 + 99}]
    ds, report = load_dataset(_dump_dir(tmp_path, users, threads, posts, []))
    assert ds.start_posts["t"].post_id == "t:start"
    assert report.repaired["synthesized_start_posts"] == 1


def test_join_clamped_and_missing_counts(tmp_path):
    users, threads, posts = _base()
    users[0]["join_ts"] = T0 + 1000
    ds, report = load_dataset(_dump_dir(tmp_path, users, threads, posts, []))
    assert ds.user_index["a"].join_ts == T0 + 10
    assert report.repaired["join_ts_clamped"] == 1
    assert ds.thread_index["t"].views == 0
    assert report.missing_fields


def test_window_is_half_open():
    w = TimeWindow(100, 10)
    assert w.contains(100) and w.contains(109) and not w.contains(110)
    assert w.intersect(TimeWindow(110, 5)) is None
    assert w.intersect(TimeWindow(105, 50)) == TimeWindow(105, 5)
    with pytest.raises(ValueError):
        TimeWindow(0, 0)


def test_slice_keeps_threads_by_start_post(forum):
    w = TimeWindow(T0, HOUR + 1)
    s = slice_dataset(forum, w)
    assert [t.thread_id for t in s.threads] == ["t1"]
    assert [p.post_id for p in s.posts] == ["p1", "p2"]
    assert [m.msg_id for m in s.messages] == ["m1"]
    assert len(s.users) == 3


def test_covering_window_includes_last_event(forum):
    w = TimeWindow.covering(forum)
    assert record_multiset(slice_dataset(forum, w)) == record_multiset(forum)


def test_export_is_sorted_json(tmp_path, forum):
    export_dataset(forum, tmp_path)
    first = json.loads((tmp_path / "posts.jsonl").read_text().splitlines()[0])
    assert list(first) == sorted(first)
