import json
import random
import threading
import urllib.error
import urllib.request

import pytest

from hermes.ledger import (LedgerClient, LedgerCorruption, LedgerEntry, LedgerError, LedgerServer,
                           LedgerStore, content_key)


class Crash(Exception):
    pass


def test_idempotent_publish(tmp_path):
    store = LedgerStore(tmp_path / "l.jsonl")
    acks = [store.publish(b"c", b"t") for _ in range(3)]
    assert acks == [1, 1, 1]
    assert len(store) == 1
    assert store.publish(b"c2", b"t2") == 2
    assert store.query_by_tag(b"t").ts == 1
    assert store.query_since(store.latest_ts()) == []


def test_concurrent_duplicate_publishers(tmp_path):
    store = LedgerStore(tmp_path / "l.jsonl")
    out = []
    ts = [threading.Thread(target=lambda: out.append(store.publish(b"x", b"y"))) for _ in range(3)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    assert out == [1, 1, 1] and len(store) == 1


def test_scan_ordering_and_replay(tmp_path):
    path = tmp_path / "l.jsonl"
    store = LedgerStore(path)
    r = random.Random(1)
    for _ in range(1000):
        store.publish(r.randbytes(20), r.randbytes(17))
    entries = store.query_since(0)
    assert [e.ts for e in entries] == list(range(1, len(entries) + 1))
    assert [e.ts for e in store.query_since(500)] == list(range(501, len(entries) + 1))
    again = LedgerStore(path)
    assert again.query_since(0) == entries


def test_file_is_grow_only(tmp_path):
    path = tmp_path / "l.jsonl"
    store = LedgerStore(path)
    prev = path.read_bytes()
    for i in range(50):
        store.publish(bytes([i]), b"tag%d" % i)
        store.publish(bytes([i]), b"tag%d" % i)
        now = path.read_bytes()
        assert now.startswith(prev)
        prev = now
    for line in prev.splitlines():
        obj = json.loads(line)
        assert "h" in obj


@pytest.mark.parametrize("stage", ["after_write", "before_ack"])
def test_crash_then_replay(tmp_path, stage):
    path = tmp_path / "l.jsonl"

    def failpoint(s):
        if s == stage:
            raise Crash(s)

    store = LedgerStore(path, failpoint=failpoint)
    with pytest.raises(Crash):
        store.publish(b"c", b"t")
    restarted = LedgerStore(path)
    assert len(restarted) == 1
    assert restarted.publish(b"c", b"t") == 1  # retry hits the durable entry
    assert len(LedgerStore(path)) == 1


def test_torn_write_is_repaired_grow_only(tmp_path):
    path = tmp_path / "l.jsonl"
    store = LedgerStore(path)
    store.publish(b"a", b"b")
    with open(path, "ab") as fh:
        fh.write(b'{"ts": 2, "c": "tor')
    before = path.read_bytes()
    again = LedgerStore(path)
    assert len(again) == 1 and again.skipped_partial == 1
    assert path.read_bytes().startswith(before)
    assert again.publish(b"new", b"entry") == 2
    third = LedgerStore(path)
    assert [e.ts for e in third.query_since(0)] == [1, 2]


def test_corruption_detected(tmp_path):
    path = tmp_path / "l.jsonl"
    store = LedgerStore(path)
    store.publish(b"a", b"b")
    store.publish(b"c", b"d")
    lines = path.read_bytes().splitlines()
    obj = json.loads(lines[0])
    obj["c"] = "AAAA"
    path.write_bytes(json.dumps(obj).encode() + b"\n" + lines[1] + b"\n")
    with pytest.raises(LedgerCorruption):
        LedgerStore(path)


def test_storage_failure(tmp_path):
    store = LedgerStore(tmp_path / "l.jsonl")
    (tmp_path / "l.jsonl").unlink()
    (tmp_path / "l.jsonl").mkdir()
    with pytest.raises(LedgerError):
        store.publish(b"a", b"b")


def test_content_key():
    assert content_key(b"ab", b"c") != content_key(b"a", b"bc")


def test_http_api(tmp_path):
    srv = LedgerServer(LedgerStore(tmp_path / "l.jsonl")).start()
    try:
        client = LedgerClient(srv.url)
        assert [client.publish(b"c", b"t") for _ in range(3)] == [1, 1, 1]
        assert client.publish(b"c2", b"t2") == 2
        assert client.query_by_tag(b"t").c == b"c"
        assert client.query_by_tag(b"none") is None
        assert [e.ts for e in client.query_since(0)] == [1, 2]
        assert client.query_since(2) == []
        req = urllib.request.Request(srv.url + "/publish", data=b"{}", method="POST")
        with pytest.raises(urllib.error.HTTPError) as info:
            urllib.request.urlopen(req)
        assert info.value.code == 400
        with urllib.request.urlopen(srv.url + "/entries?since=1") as resp:
            body = json.loads(resp.read())
        assert [e["ts"] for e in body["entries"]] == [2]
    finally:
        srv.stop()


def test_entry_json_roundtrip():
    e = LedgerEntry(3, 1.5, b"\x00\x01", b"\xff")
    line = json.loads(e.to_line())
    assert LedgerEntry.from_json(line, check_hash=True) == e
