"""VSSP server daemon: registration store, tape pool and token-generation sessions.

A server only ever sees shares.  It never imports the user-side protocol
modules, and what it persists (registration rows, audit records, logs) holds
shares, public ciphertexts and metadata.

Control plane (JSON over HTTP)::

    POST /register     {"rows": [RegistrationRow JSON, ...]}
    POST /at_gen_req   AT_GEN_REQ message  -> AT_PUB_ACK message
    GET  /health
    GET  /pubkey

Data plane: one :class:`~hermes.transport.TcpFabric` shared by all sessions.
"""
from __future__ import annotations

import base64
import json
import logging
import os
import sqlite3
import threading
import time
from concurrent.futures import ThreadPoolExecutor, TimeoutError as FutureTimeout
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .dealer import tape_path
from .ledger import LedgerClient, LedgerError
from .protocol import messages as msg
from .protocol.crypto import SealKey
from .protocol.step2 import RequestError, Step2Input, inputs_from_request, step2_program
from .protocol.wire import (BACKENDS, RegistrationRow, WireFormatError, domain_of, encode_ct,
                            encode_shares, encode_tag)
from .repshare.engine import Party
from .repshare.tape import PreprocessingExhausted, PreprocessingTape, TapeFormatError
from .transport import SessionAbort, TcpFabric, TransportError

log = logging.getLogger(__name__)


class ServerError(RuntimeError):
    status = 500


class UnknownOwner(ServerError):
    status = 404


class DuplicateRow(ServerError):
    status = 409


class SessionFailed(ServerError):
    status = 504


@dataclass
class ServerConfig:
    party_id: int
    listen: str  # control plane host:port
    peers: list[str]  # data-plane addresses of parties 0, 1, 2 (own entry included)
    ledger_url: str
    db_path: str
    tape_dir: str
    seal_key_path: str
    audit_dir: str
    backends: tuple[str, ...] = BACKENDS
    workers: int = 4
    session_timeout: float = 30.0
    link_secret: bytes | None = None
    scheme_blocks: int | None = None

    def validate(self) -> None:
        if self.party_id not in (0, 1, 2):
            raise ValueError("party id must be 0, 1 or 2")
        if len(self.peers) != 3:
            raise ValueError("need the data-plane addresses of all three parties")
        for b in self.backends:
            if b not in BACKENDS:
                raise ValueError(f"unknown backend {b!r}")


# ---------------------------------------------------------------------------
# registration rows


class ServerDatabase:
    """Registration rows in SQLite, keyed by (owner_id, row_index).

    WAL mode with one connection per thread: readers run concurrently and
    writers are serialized by SQLite.
    """

    def __init__(self, path: str | Path, party_id: int):
        self.path = str(path)
        self.party_id = party_id
        self._local = threading.local()
        with self._conn() as db:
            db.execute("PRAGMA journal_mode=WAL")
            db.execute("CREATE TABLE IF NOT EXISTS rows (owner_id TEXT NOT NULL, row_index INTEGER NOT NULL,"
                       " party INTEGER NOT NULL, arith BLOB NOT NULL, bits BLOB NOT NULL,"
                       " PRIMARY KEY (owner_id, row_index))")

    def _conn(self) -> sqlite3.Connection:
        db = getattr(self._local, "db", None)
        if db is None:
            db = sqlite3.connect(self.path, timeout=30.0)
            self._local.db = db
        return db

    def load(self, rows: list[RegistrationRow]) -> int:
        for r in rows:
            if r.party != self.party_id:
                raise ServerError(f"row addressed to party {r.party}, this is party {self.party_id}")
        obj = [r.to_json() for r in rows]
        try:
            with self._conn() as db:
                db.executemany("INSERT INTO rows VALUES (?, ?, ?, ?, ?)",
                               [(o["owner_id"], o["row_index"], o["party"], o["arith"], o["bits"])
                                for o in obj])
        except sqlite3.IntegrityError as exc:
            raise DuplicateRow("row already registered for this owner") from exc
        return len(rows)

    def owner_rows(self, owner_id: str) -> list[RegistrationRow]:
        cur = self._conn().execute("SELECT owner_id, row_index, party, arith, bits FROM rows"
                                   " WHERE owner_id = ? ORDER BY row_index", (owner_id,))
        return [RegistrationRow.from_json(dict(zip(("owner_id", "row_index", "party", "arith", "bits"), r)))
                for r in cur]

    def count(self) -> int:
        return self._conn().execute("SELECT COUNT(*) FROM rows").fetchone()[0]


# ---------------------------------------------------------------------------
# preprocessing tapes


class TapePool:
    """Dealer tapes on disk, consumed at most once by atomic rename to ``.used``."""

    def __init__(self, tape_dir: str | Path, party_id: int):
        self.tape_dir = Path(tape_dir)
        self.party_id = party_id
        self._lock = threading.Lock()

    def available(self, backend: str) -> list[int]:
        d = self.tape_dir / backend
        if not d.is_dir():
            return []
        suffix = f".p{self.party_id}.tape"
        return sorted(int(p.name[:-len(suffix)]) for p in d.iterdir() if p.name.endswith(suffix))

    def _claim(self, backend: str, index: int) -> PreprocessingTape:
        path = tape_path(self.tape_dir, backend, index, self.party_id)
        used = path.with_name(path.name + ".used")
        try:
            os.rename(path, used)
        except FileNotFoundError:
            raise PreprocessingExhausted(f"{backend} tape {index}", 1, 0) from None
        tape = PreprocessingTape.load(used)
        if tape.party != self.party_id:
            raise TapeFormatError(f"tape {index} belongs to party {tape.party}")
        return tape

    def claim_next(self, backend: str) -> tuple[int, PreprocessingTape]:
        with self._lock:
            for index in self.available(backend):
                try:
                    return index, self._claim(backend, index)
                except PreprocessingExhausted:
                    continue
        raise PreprocessingExhausted(f"{backend} tapes", 1, 0)

    def claim(self, backend: str, index: int) -> PreprocessingTape:
        with self._lock:
            return self._claim(backend, index)


# ---------------------------------------------------------------------------
# the daemon


class VsspServer:
    def __init__(self, cfg: ServerConfig, ledger=None, fabric: TcpFabric | None = None):
        cfg.validate()
        self.cfg = cfg
        self.party_id = cfg.party_id
        self.db = ServerDatabase(cfg.db_path, cfg.party_id)
        self.tapes = TapePool(cfg.tape_dir, cfg.party_id)
        self.seal_key = load_or_create_seal_key(cfg.seal_key_path)
        self.ledger = ledger if ledger is not None else LedgerClient(cfg.ledger_url)
        self.audit_dir = Path(cfg.audit_dir)
        self.audit_dir.mkdir(parents=True, exist_ok=True)
        use_aead = cfg.link_secret is not None
        self.fabric = fabric or TcpFabric(cfg.party_id, cfg.peers, timeout=cfg.session_timeout,
                                          use_aead=use_aead, link_secret=cfg.link_secret)
        self.pool = ThreadPoolExecutor(max_workers=cfg.workers, thread_name_prefix=f"s{cfg.party_id}")
        self._active: set[bytes] = set()
        self._active_lock = threading.Lock()
        self.httpd: ThreadingHTTPServer | None = None
        self.sessions_done = 0
        self.last_stats: dict | None = None

    # -- lifecycle -------------------------------------------------------------
    def start(self) -> "VsspServer":
        if self.fabric._listener is None:
            self.fabric.start()
        host, _, port = self.cfg.listen.rpartition(":")
        self.httpd = ThreadingHTTPServer((host or "127.0.0.1", int(port)), _make_handler(self))
        self.httpd.daemon_threads = True
        threading.Thread(target=self.httpd.serve_forever, daemon=True).start()
        log.info("party %d listening on %s", self.party_id, self.url)
        return self

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def stop(self) -> None:
        if self.httpd is not None:
            self.httpd.shutdown()
            self.httpd.server_close()
        self.pool.shutdown(wait=False, cancel_futures=True)
        self.fabric.close()

    # -- operations --------------------------------------------------------------
    def load_registration(self, rows: list[RegistrationRow]) -> int:
        n = self.db.load(rows)
        log.info("stored %d registration rows", n)
        return n

    def handle_at_gen_req(self, req: msg.Message) -> msg.Message:
        if req.type != msg.AT_GEN_REQ:
            raise ServerError(f"expected AT_GEN_REQ, got {req.type}")
        if req["backend"] not in self.cfg.backends:
            raise ServerError(f"backend {req['backend']} is not enabled here")
        rows = self.db.owner_rows(req["owner_id"])
        if not rows:
            raise UnknownOwner("owner has no registered vehicles")
        sid = req["session_id"]
        with self._active_lock:
            if sid in self._active:
                raise DuplicateRow("session already running")
            self._active.add(sid)
        try:
            fut = self.pool.submit(self._run_session, req, rows)
            try:
                return fut.result(timeout=self.cfg.session_timeout * 3)
            except FutureTimeout:
                raise SessionFailed("session did not finish in time") from None
        finally:
            with self._active_lock:
                self._active.discard(sid)

    def _run_session(self, req: msg.Message, rows: list[RegistrationRow]) -> msg.Message:
        sid = req["session_id"]
        t0 = time.perf_counter()
        try:
            x = inputs_from_request(req, self.party_id, self.seal_key, rows, self.cfg.scheme_blocks)
        except RequestError as exc:
            raise ServerError(str(exc)) from exc
        ch = self.fabric.channel(sid, timeout=self.cfg.session_timeout)
        try:
            tape = self._negotiate(ch, req, x)
            party = Party(self.party_id, ch, tape)
            (out,) = party.run(step2_program(party, x))
        except (TransportError, PreprocessingExhausted, TapeFormatError) as exc:
            try:
                ch.abort(str(exc))
            except Exception:
                pass
            log.warning("session %s failed: %s", sid.hex(), exc)
            raise SessionFailed(f"session failed: {exc}") from exc
        finally:
            ch.close()
        t_mpc = time.perf_counter() - t0
        c, tag = encode_ct(x.backend, out.c), encode_tag(x.backend, out.tag)
        ts = self._publish(c, tag)
        self._write_audit(req, x, ts, c, tag)
        self.sessions_done += 1
        self.last_stats = dict(ch.stats.as_dict(), mpc_seconds=t_mpc)
        log.info("session %s published at ts=%d (%d rounds, %d bytes sent)", sid.hex(), ts,
                 ch.stats.online_rounds, ch.stats.bytes_sent)
        return msg.make(msg.AT_PUB_ACK, session_id=sid, booking_id=req["booking_id"], ts=ts)

    def _negotiate(self, ch, req: msg.Message, x: Step2Input) -> PreprocessingTape:
        """Agree on backend, row count and tape index; party 0 picks the tape."""
        info = {"backend": x.backend, "n_rows": len(x.rows), "booking_id": req["booking_id"],
                "owner_id": req["owner_id"], "m_blocks": len(x.m), "tape": None}
        tape = None
        if self.party_id == 0:
            info["tape"], tape = self.tapes.claim_next(x.backend)
        peers = {j: json.loads(v) for j, v in ch.handshake(json.dumps(info).encode()).items()}
        for j, theirs in peers.items():
            for key in ("backend", "n_rows", "booking_id", "owner_id", "m_blocks"):
                if theirs.get(key) != info[key]:
                    raise SessionAbort(f"{key} mismatch with party {j}", j)
        if tape is None:
            index = peers[0]["tape"]
            if not isinstance(index, int):
                raise SessionAbort("coordinator sent no tape index", 0)
            tape = self.tapes.claim(x.backend, index)
        if tape.domain.label != domain_of(x.backend).label:
            raise TapeFormatError("tape domain does not match the backend")
        return tape

    def _publish(self, c: bytes, tag: bytes, attempts: int = 5) -> int:
        delay = 0.05
        for k in range(attempts):
            try:
                return self.ledger.publish(c, tag)
            except LedgerError as exc:
                if k == attempts - 1:
                    raise SessionFailed(f"ledger publish failed: {exc}") from exc
                time.sleep(delay)
                delay *= 2
        raise AssertionError("unreachable")

    def _write_audit(self, req: msg.Message, x: Step2Input, ts: int, c: bytes, tag: bytes) -> None:
        record = {
            "session_id": req["session_id"].hex(),
            "party": self.party_id,
            "backend": x.backend,
            "booking_id": req["booking_id"],
            "owner_id": req["owner_id"],
            "ts": ts,
            "m_shares": encode_shares(x.backend, x.m + [x.vid]).hex(),
            "c": c.hex(),
            "tag": tag.hex(),
        }
        path = self.audit_dir / f"{record['session_id']}.p{self.party_id}.json"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(record, sort_keys=True))
        os.replace(tmp, path)

    def health(self) -> dict:
        return {"ok": True, "party": self.party_id, "backends": list(self.cfg.backends),
                "rows": self.db.count(), "sessions": self.sessions_done,
                "tapes": {b: len(self.tapes.available(b)) for b in self.cfg.backends}}


def load_or_create_seal_key(path: str | Path) -> SealKey:
    p = Path(path)
    if p.exists():
        return SealKey.from_private_bytes(bytes.fromhex(p.read_text().strip()))
    key = SealKey.generate()
    p.parent.mkdir(parents=True, exist_ok=True)
    fd = os.open(p, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o600)
    with os.fdopen(fd, "w") as fh:
        fh.write(key.private_bytes().hex())
    return key


def _make_handler(server: VsspServer):
    class Handler(BaseHTTPRequestHandler):
        server_version = "hermes-vssp/1"

        def log_message(self, fmt, *args):
            pass

        def _reply(self, status: int, body: dict) -> None:
            data = json.dumps(body).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def _body(self):
            length = int(self.headers.get("Content-Length", "0"))
            return json.loads(self.rfile.read(length))

        def do_GET(self):
            if self.path == "/health":
                return self._reply(200, server.health())
            if self.path == "/pubkey":
                return self._reply(200, {"party": server.party_id,
                                         "seal_public": base64.b64encode(server.seal_key.public_bytes()).decode()})
            self._reply(404, {"error": "not found"})

        def do_POST(self):
            try:
                body = self._body()
            except ValueError:
                return self._reply(400, {"error": "body must be JSON"})
            try:
                if self.path == "/register":
                    rows = [RegistrationRow.from_json(o) for o in body["rows"]]
                    return self._reply(200, {"stored": server.load_registration(rows)})
                if self.path == "/at_gen_req":
                    ack = server.handle_at_gen_req(msg.from_json(body))
                    return self._reply(200, ack.to_json())
            except (KeyError, TypeError, WireFormatError, msg.MessageError) as exc:
                return self._reply(400, {"error": f"bad request: {exc}"})
            except ServerError as exc:
                return self._reply(exc.status, {"error": str(exc)})
            self._reply(404, {"error": "not found"})

    return Handler


# ---------------------------------------------------------------------------
# client helpers (used by the owner, the VM and the orchestrator)


class ServerClient:
    def __init__(self, url: str, timeout: float = 120.0):
        self.url = url.rstrip("/")
        self.timeout = timeout

    def _call(self, method: str, path: str, body: dict | None = None) -> tuple[int, dict]:
        import urllib.error
        import urllib.request
        data = json.dumps(body).encode() if body is not None else None
        req = urllib.request.Request(self.url + path, data=data, method=method,
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.status, json.loads(resp.read())
        except urllib.error.HTTPError as exc:
            return exc.code, json.loads(exc.read() or b"{}")
        except OSError as exc:
            return 599, {"error": f"unreachable: {exc}"}

    def health(self) -> dict:
        return self._call("GET", "/health")[1]

    def seal_public(self) -> bytes:
        status, body = self._call("GET", "/pubkey")
        if status != 200:
            raise ServerError(body.get("error", "pubkey unavailable"))
        return base64.b64decode(body["seal_public"])

    def register(self, rows: list[RegistrationRow]) -> int:
        status, body = self._call("POST", "/register", {"rows": [r.to_json() for r in rows]})
        if status != 200:
            err = DuplicateRow if status == 409 else ServerError
            raise err(body.get("error", f"status {status}"))
        return body["stored"]

    def at_gen_req(self, req: msg.Message) -> msg.Message:
        status, body = self._call("POST", "/at_gen_req", req.to_json())
        if status != 200:
            err = {404: UnknownOwner, 504: SessionFailed}.get(status, ServerError)
            raise err(body.get("error", f"status {status}"))
        return msg.from_json(body)


def submit_requests(urls: list[str], reqs: list[msg.Message], timeout: float = 120.0) -> int:
    """Send each server its AT_GEN_REQ concurrently; return the agreed ledger ts."""
    results: list = [None] * 3

    def go(i):
        try:
            results[i] = ServerClient(urls[i], timeout).at_gen_req(reqs[i])
        except ServerError as exc:
            results[i] = exc

    threads = [threading.Thread(target=go, args=(i,)) for i in range(3)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    errors = [r for r in results if isinstance(r, Exception)]
    if errors:
        raise errors[0]
    stamps = {r["ts"] for r in results}
    if len(stamps) != 1:
        raise ServerError(f"servers acknowledged different timestamps {sorted(stamps)}")
    return stamps.pop()
