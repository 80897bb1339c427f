"""Append-only public ledger: a bulletin board of (C, tag) entries.

Entries are ordered by a sequence number ``ts``; wall-clock time is kept as
advisory metadata.  Publishing the same (C, tag) again returns the original
``ts``, so all three servers can publish independently.

Persistence is JSON lines, one entry per line, each carrying a SHA-256 of
its own content.  The file only ever grows.
"""
from __future__ import annotations

import base64
import hashlib
import json
import os
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable


class LedgerError(RuntimeError):
    pass


class LedgerCorruption(LedgerError):
    pass


def content_key(c: bytes, tag: bytes) -> str:
    return hashlib.sha256(len(c).to_bytes(8, "big") + c + tag).hexdigest()


@dataclass(frozen=True)
class LedgerEntry:
    ts: int
    wall: float
    c: bytes
    tag: bytes

    def body(self) -> dict:
        return {"ts": self.ts, "wall": self.wall, "c": base64.b64encode(self.c).decode(),
                "tag": base64.b64encode(self.tag).decode()}

    def to_line(self) -> bytes:
        body = self.body()
        canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
        body["h"] = hashlib.sha256(canon.encode()).hexdigest()
        return (json.dumps(body, sort_keys=True, separators=(",", ":")) + "\n").encode()

    @classmethod
    def from_json(cls, obj: dict, check_hash: bool = False) -> "LedgerEntry":
        try:
            entry = cls(int(obj["ts"]), float(obj["wall"]), base64.b64decode(obj["c"], validate=True),
                        base64.b64decode(obj["tag"], validate=True))
        except (KeyError, TypeError, ValueError) as exc:
            raise LedgerCorruption(f"bad entry: {exc}") from exc
        if check_hash:
            canon = json.dumps(entry.body(), sort_keys=True, separators=(",", ":"))
            if hashlib.sha256(canon.encode()).hexdigest() != obj.get("h"):
                raise LedgerCorruption(f"hash mismatch for ts={entry.ts}")
        return entry


class LedgerStore:
    """In-memory index over an optional JSON-lines file.

    ``failpoint`` is called with a stage name during publish; tests raise from
    it to simulate a crash between the durable write and the acknowledgement.
    """

    def __init__(self, path: str | Path | None = None,
                 failpoint: Callable[[str], None] | None = None, clock=time.time):
        self.path = Path(path) if path else None
        self.failpoint = failpoint
        self.clock = clock
        self._entries: list[LedgerEntry] = []
        self._by_key: dict[str, int] = {}
        self._by_tag: dict[bytes, LedgerEntry] = {}
        self._lock = threading.Lock()
        self.skipped_partial = 0
        if self.path is not None:
            self._replay()

    def _replay(self) -> None:
        if not self.path.exists():
            self.path.touch()
            return
        lines = self.path.read_bytes().split(b"\n")
        tail = lines.pop()  # empty when the file ends with a newline
        parsed: list[tuple[int, dict | None]] = []
        repaired: set[int] = set()
        for n, line in enumerate(lines, 1):
            if not line:
                continue
            try:
                obj = json.loads(line)
            except ValueError:
                parsed.append((n, None))
                continue
            if "repair" in obj:
                repaired.add(int(obj["repair"]))
            else:
                parsed.append((n, obj))
        for n, obj in parsed:
            if obj is None:
                if n in repaired:
                    continue
                raise LedgerCorruption(f"line {n} is not JSON")
            self._index(LedgerEntry.from_json(obj, check_hash=True))
        if tail:
            # torn final write: close the line and mark it, keeping the file grow-only
            self.skipped_partial += 1
            marker = json.dumps({"repair": len(lines) + 1}).encode()
            with open(self.path, "ab") as fh:
                fh.write(b"\n" + marker + b"\n")
                fh.flush()
                os.fsync(fh.fileno())
        self.skipped_partial += len(repaired)

    def _index(self, entry: LedgerEntry) -> None:
        if self._entries and entry.ts <= self._entries[-1].ts:
            raise LedgerCorruption("timestamps are not increasing")
        key = content_key(entry.c, entry.tag)
        if key in self._by_key:
            raise LedgerCorruption(f"duplicate content at ts={entry.ts}")
        self._entries.append(entry)
        self._by_key[key] = entry.ts
        self._by_tag.setdefault(entry.tag, entry)

    def _fail(self, stage: str) -> None:
        if self.failpoint is not None:
            self.failpoint(stage)

    def publish(self, c: bytes, tag: bytes) -> int:
        key = content_key(c, tag)
        with self._lock:
            if key in self._by_key:
                return self._by_key[key]
            ts = self._entries[-1].ts + 1 if self._entries else 1
            entry = LedgerEntry(ts, self.clock(), bytes(c), bytes(tag))
            if self.path is not None:
                try:
                    with open(self.path, "ab") as fh:
                        fh.write(entry.to_line())
                        fh.flush()
                        os.fsync(fh.fileno())
                except OSError as exc:
                    raise LedgerError(f"cannot persist entry: {exc}") from exc
            self._fail("after_write")
            self._index(entry)
            self._fail("before_ack")
            return ts

    def query_since(self, ts: int) -> list[LedgerEntry]:
        entries = self._entries  # appends never move existing items
        lo, hi = 0, len(entries)
        while lo < hi:
            mid = (lo + hi) // 2
            if entries[mid].ts <= ts:
                lo = mid + 1
            else:
                hi = mid
        return entries[lo:]

    def query_by_tag(self, tag: bytes) -> LedgerEntry | None:
        return self._by_tag.get(bytes(tag))

    def latest_ts(self) -> int:
        return self._entries[-1].ts if self._entries else 0

    def __len__(self) -> int:
        return len(self._entries)


# ---------------------------------------------------------------------------
# HTTP service


def _make_handler(store: LedgerStore):
    class Handler(BaseHTTPRequestHandler):
        server_version = "hermes-ledger/1"

        def log_message(self, fmt, *args):  # no client identity is recorded
            pass

        def _reply(self, status: int, body: dict) -> None:
            data = json.dumps(body).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_POST(self):
            if self.path != "/publish":
                return self._reply(404, {"error": "not found"})
            try:
                length = int(self.headers.get("Content-Length", "0"))
                body = json.loads(self.rfile.read(length))
                c = base64.b64decode(body["c"], validate=True)
                tag = base64.b64decode(body["tag"], validate=True)
            except (ValueError, KeyError, TypeError):
                return self._reply(400, {"error": "expected JSON {c, tag} with base64 values"})
            try:
                ts = store.publish(c, tag)
            except LedgerError as exc:
                return self._reply(503, {"error": str(exc)})
            self._reply(200, {"ts": ts})

        def do_GET(self):
            url = urllib.parse.urlparse(self.path)
            if url.path == "/entries":
                q = urllib.parse.parse_qs(url.query)
                try:
                    since = int(q.get("since", ["0"])[0])
                except ValueError:
                    return self._reply(400, {"error": "since must be an integer"})
                return self._reply(200, {"entries": [e.body() for e in store.query_since(since)]})
            if url.path.startswith("/entry/by-tag/"):
                try:
                    tag = bytes.fromhex(url.path[len("/entry/by-tag/"):])
                except ValueError:
                    return self._reply(400, {"error": "tag must be hex"})
                entry = store.query_by_tag(tag)
                if entry is None:
                    return self._reply(404, {"error": "no entry with this tag"})
                return self._reply(200, entry.body())
            if url.path == "/health":
                return self._reply(200, {"ok": True, "entries": len(store)})
            self._reply(404, {"error": "not found"})

    return Handler


class LedgerServer:
    def __init__(self, store: LedgerStore, host: str = "127.0.0.1", port: int = 0):
        self.store = store
        self.httpd = ThreadingHTTPServer((host, port), _make_handler(store))
        self.httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "LedgerServer":
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()


class LedgerClient:
    """HTTP client with the same query interface as :class:`LedgerStore`."""

    def __init__(self, url: str, timeout: float = 10.0):
        self.url = url.rstrip("/")
        self.timeout = timeout

    def _call(self, method: str, path: str, body: dict | None = None):
        data = json.dumps(body).encode() if body is not None else None
        req = urllib.request.Request(self.url + path, data=data, method=method,
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.status, json.loads(resp.read())
        except urllib.error.HTTPError as exc:
            return exc.code, json.loads(exc.read() or b"{}")
        except (urllib.error.URLError, OSError) as exc:
            raise LedgerError(f"ledger unreachable: {exc}") from exc

    def publish(self, c: bytes, tag: bytes) -> int:
        status, body = self._call("POST", "/publish", {"c": base64.b64encode(c).decode(),
                                                       "tag": base64.b64encode(tag).decode()})
        if status != 200:
            raise LedgerError(f"publish failed ({status}): {body.get('error')}")
        return int(body["ts"])

    def query_since(self, ts: int) -> list[LedgerEntry]:
        status, body = self._call("GET", f"/entries?since={int(ts)}")
        if status != 200:
            raise LedgerError(f"query failed ({status})")
        return [LedgerEntry.from_json(e) for e in body["entries"]]

    def query_by_tag(self, tag: bytes) -> LedgerEntry | None:
        status, body = self._call("GET", f"/entry/by-tag/{bytes(tag).hex()}")
        if status == 404:
            return None
        if status != 200:
            raise LedgerError(f"query failed ({status})")
        return LedgerEntry.from_json(body)
