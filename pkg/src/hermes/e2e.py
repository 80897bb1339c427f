"""Local deployment (ledger + three servers) and the end-to-end booking flow.

The deployment runs the servers either as threads in this process or as
``hermes server`` subprocesses; the user-side roles always run here.
"""
from __future__ import annotations

import json
import logging
import os
import random
import secrets
import shutil
import socket
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from .dealer import write_tapes
from .ledger import LedgerClient, LedgerServer, LedgerStore
from .mimc import SessionKeys
from .protocol import messages as msg
from .protocol.booking import UNLOCK, LOCK, BookingDetails, Conditions, m_block_count
from .protocol.crypto import ED25519, Certificate, SigningKey
from .protocol.roles import (AccessDecision, EntryNotFound, Obu, TagMismatch, VmDatabase,
                             answer_challenge, step1_consumer, step1_owner, step3_consumer,
                             step_a_register)
from .protocol.wire import BACKENDS, MIMC, WireFormatError, encode_ct
from .server import ServerClient, ServerConfig, ServerError, VsspServer, submit_requests

log = logging.getLogger(__name__)


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class LocalDeployment:
    """A ledger and three servers on loopback, with state under ``workdir``."""

    def __init__(self, workdir: str | Path | None = None, mode: str = "thread",
                 backends: tuple[str, ...] = BACKENDS, session_timeout: float = 30.0,
                 workers: int = 4, link_secret: bytes | None = None):
        if mode not in ("thread", "process"):
            raise ValueError("mode must be 'thread' or 'process'")
        self._own_dir = workdir is None
        self.workdir = Path(workdir or tempfile.mkdtemp(prefix="hermes-"))
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.mode = mode
        self.backends = backends
        self.session_timeout = session_timeout
        self.workers = workers
        self.link_secret = link_secret
        self.data_addrs = [f"127.0.0.1:{free_port()}" for _ in range(3)]
        self.http_addrs = [f"127.0.0.1:{free_port()}" for _ in range(3)]
        self.ledger_store: LedgerStore | None = None
        self.ledger_server: LedgerServer | None = None
        self.ledger_proc: subprocess.Popen | None = None
        self.ledger_url = ""
        self.servers: list = [None, None, None]
        self._log_handler: logging.Handler | None = None

    # -- paths -------------------------------------------------------------------
    def party_dir(self, i: int) -> Path:
        return self.workdir / f"server{i}"

    @property
    def tape_dir(self) -> Path:
        return self.workdir / "tapes"

    @property
    def urls(self) -> list[str]:
        return [f"http://{a}" for a in self.http_addrs]

    def config(self, i: int) -> ServerConfig:
        d = self.party_dir(i)
        return ServerConfig(party_id=i, listen=self.http_addrs[i], peers=self.data_addrs,
                            ledger_url=self.ledger_url, db_path=str(d / "rows.sqlite"),
                            tape_dir=str(self.tape_dir), seal_key_path=str(d / "seal.key"),
                            audit_dir=str(d / "audit"), backends=self.backends,
                            workers=self.workers, session_timeout=self.session_timeout,
                            link_secret=self.link_secret)

    # -- lifecycle ---------------------------------------------------------------
    def start(self) -> "LocalDeployment":
        for i in range(3):
            self.party_dir(i).mkdir(parents=True, exist_ok=True)
        if self.mode == "thread":
            self.ledger_store = LedgerStore(self.workdir / "ledger.jsonl")
            self.ledger_server = LedgerServer(self.ledger_store).start()
            self.ledger_url = self.ledger_server.url
            self._log_handler = logging.FileHandler(self.workdir / "servers.log")
            self._log_handler.setFormatter(logging.Formatter("%(asctime)s %(threadName)s %(name)s %(message)s"))
            for name in ("hermes.server", "hermes.transport", "hermes.ledger"):
                lg = logging.getLogger(name)
                lg.addHandler(self._log_handler)
                lg.setLevel(logging.INFO)
        else:
            port = free_port()
            self.ledger_url = f"http://127.0.0.1:{port}"
            self.ledger_proc = self._spawn(["ledger", "--listen", f"127.0.0.1:{port}",
                                            "--path", str(self.workdir / "ledger.jsonl")],
                                           self.workdir / "ledger.log")
            _wait_http(self.ledger_url + "/health", 20.0)
        for i in range(3):
            self.start_server(i)
        for i in range(3):
            _wait_http(self.urls[i] + "/health", 20.0)
        return self

    def _spawn(self, args: list[str], log_path: Path) -> subprocess.Popen:
        fh = open(log_path, "ab")
        env = dict(os.environ)
        src = str(Path(__file__).resolve().parents[1])
        env["PYTHONPATH"] = src + os.pathsep + env.get("PYTHONPATH", "")
        return subprocess.Popen([sys.executable, "-m", "hermes.cli", *args], stdout=fh, stderr=fh, env=env)

    def start_server(self, i: int) -> None:
        cfg = self.config(i)
        if self.mode == "thread":
            self.servers[i] = VsspServer(cfg).start()
            return
        args = ["server", "--party", str(i), "--listen", cfg.listen, "--peers", ",".join(cfg.peers),
                "--ledger", cfg.ledger_url, "--db", cfg.db_path, "--tape", cfg.tape_dir,
                "--key", cfg.seal_key_path, "--audit", cfg.audit_dir,
                "--backend", ",".join(cfg.backends), "--workers", str(cfg.workers),
                "--timeout", str(cfg.session_timeout), "--log-file", str(self.party_dir(i) / "server.log")]
        if self.link_secret:
            secret_path = self.workdir / "link.secret"
            if not secret_path.exists():
                secret_path.write_text(self.link_secret.hex())
            args += ["--link-secret-file", str(secret_path)]
        self.servers[i] = self._spawn(args, self.party_dir(i) / "stdout.log")

    def stop_server(self, i: int) -> None:
        s = self.servers[i]
        if s is None:
            return
        if isinstance(s, subprocess.Popen):
            s.kill()
            s.wait()
        else:
            s.stop()
        self.servers[i] = None

    def restart_server(self, i: int) -> None:
        self.stop_server(i)
        self.start_server(i)
        _wait_http(self.urls[i] + "/health", 20.0)

    def stop(self) -> None:
        for i in range(3):
            self.stop_server(i)
        if self.ledger_server is not None:
            self.ledger_server.stop()
        if self.ledger_proc is not None:
            self.ledger_proc.kill()
            self.ledger_proc.wait()
        if self._log_handler is not None:
            for name in ("hermes.server", "hermes.transport", "hermes.ledger"):
                logging.getLogger(name).removeHandler(self._log_handler)
            self._log_handler.close()

    def cleanup(self) -> None:
        self.stop()
        if self._own_dir:
            shutil.rmtree(self.workdir, ignore_errors=True)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    # -- helpers -----------------------------------------------------------------
    def provision(self, backend: str, n_rows: int, count: int, m_blocks: int = 10, seed=None) -> list[int]:
        return write_tapes(self.tape_dir, backend, n_rows, count, seed=seed, m_blocks=m_blocks)

    def clients(self) -> list[ServerClient]:
        return [ServerClient(u, timeout=self.session_timeout * 4) for u in self.urls]

    def seal_publics(self) -> list[bytes]:
        return [c.seal_public() for c in self.clients()]

    def ledger(self) -> LedgerClient:
        return LedgerClient(self.ledger_url)

    def server_files(self) -> list[Path]:
        """Everything server-side that is persisted: db, audit, logs, ledger."""
        out = []
        for root in [self.party_dir(i) for i in range(3)] + [self.workdir]:
            if root == self.workdir:
                out += [p for p in root.iterdir() if p.is_file()]
            else:
                out += [p for p in root.rglob("*") if p.is_file()]
        return out


def _wait_http(url: str, timeout: float) -> None:
    import urllib.request
    deadline = time.monotonic() + timeout
    while True:
        try:
            with urllib.request.urlopen(url, timeout=1.0) as resp:
                if resp.status == 200:
                    return
        except OSError:
            pass
        if time.monotonic() > deadline:
            raise TimeoutError(f"{url} did not come up")
        time.sleep(0.05)


# ---------------------------------------------------------------------------
# user-side flows


@dataclass
class Fleet:
    """The VM's vehicles for one owner, plus the OBUs built from them."""

    owner_id: str
    owner_key: SigningKey
    vm: VmDatabase
    vehicle_ids: list[int]
    obu_keys: dict[int, SigningKey] = field(default_factory=dict)

    def obu(self, vehicle_id: int, backend: str, clock) -> Obu:
        rec = self.vm.rows[(self.owner_id, vehicle_id)]
        return Obu(vehicle_id, rec.k_veh, self.owner_key.public_bytes(), self.obu_keys[vehicle_id],
                   clock, backend)


def register_fleet(dep: LocalDeployment, owner_id: str, n: int, rng: random.Random) -> Fleet:
    """Step A: the VM creates ``n`` vehicles and loads their shares into the servers."""
    vm = VmDatabase()
    vids = rng.sample(range(1, 2 ** 32), n)
    per_party: list[list] = [[], [], []]
    fleet = Fleet(owner_id, SigningKey.generate(), vm, vids)
    for v in vids:
        vm.add_vehicle(owner_id, v, rng.getrandbits(128))
        fleet.obu_keys[v] = SigningKey.generate()
        for i, row in enumerate(step_a_register(vm, owner_id, v, rng)):
            per_party[i].append(row)
    for client, rows in zip(dep.clients(), per_party):
        client.register(rows)
    return fleet


@dataclass
class Booking:
    bd: BookingDetails
    keys: SessionKeys
    backend: str
    session_id: bytes
    requests: list[msg.Message]
    ts: int | None = None


def agree_booking(fleet: Fleet, vehicle_id: int, cert: Certificate, booking_id: int,
                  start: int, end: int, rights: int = UNLOCK | LOCK, location: int = 0) -> BookingDetails:
    """Step B: owner and consumer fix the booking details."""
    bd = BookingDetails(cert.digest(), vehicle_id, location, Conditions(start, end), rights, booking_id)
    bd.validate()
    return bd


def request_token(dep: LocalDeployment, fleet: Fleet, bd: BookingDetails, backend: str,
                  master_key: int, counter: int, rng=None, submit: bool = True) -> Booking:
    """Steps 1 and 2: session keys from the consumer, shares from the owner, then the servers."""
    ack, keys = step1_consumer(master_key, counter, bd.booking_id, dep.seal_publics(), backend, rng=rng)
    ack = msg.from_bytes(ack.to_bytes())
    reqs = step1_owner(bd, fleet.owner_key, ack, fleet.owner_id, backend, rng=rng)
    booking = Booking(bd, keys, backend, reqs[0]["session_id"], reqs)
    if submit:
        booking.ts = submit_requests(dep.urls, reqs, timeout=dep.session_timeout * 4)
    return booking


def present(obu: Obu, consumer_key: SigningKey, at_bytes: bytes, vehicle_id: int, cert_bytes: bytes,
            booking_id: int, action: int) -> AccessDecision:
    """Step 4 over the short-range channel, with raw bytes so they can be tampered with."""
    nonce = obu.challenge()
    response = answer_challenge(consumer_key, booking_id, nonce)
    return obu.step4(at_bytes, vehicle_id, cert_bytes, nonce, response, action)


class _TamperingLedger:
    """Ledger view that flips one bit of what the consumer reads."""

    def __init__(self, inner, what: str, bit: int):
        self.inner, self.what, self.bit = inner, what, bit

    def _mutate(self, entry):
        from dataclasses import replace
        data = bytearray(entry.c if self.what == "c" else entry.tag)
        pos = self.bit % (8 * len(data))
        data[pos // 8] ^= 1 << (pos % 8)
        return replace(entry, **{self.what: bytes(data)})

    def query_since(self, ts):
        return [self._mutate(e) for e in self.inner.query_since(ts)]

    def query_by_tag(self, tag):
        e = self.inner.query_by_tag(tag)
        return None if e is None else self._mutate(e)


TAMPER_CHOICES = ("ledger-c", "ledger-tag", "at", "cert")


@dataclass
class E2EResult:
    exit_code: int
    step: str
    detail: str
    artifacts: Path
    report: dict = field(default_factory=dict)


def _flip(data: bytes, bit: int) -> bytes:
    buf = bytearray(data)
    pos = bit % (8 * len(buf))
    buf[pos // 8] ^= 1 << (pos % 8)
    return bytes(buf)


def run_e2e(n_vehicles: int = 2, backend: str = MIMC, workdir: str | Path | None = None,
            tamper: str | None = None, revoke_after_publish: bool = False, seed: int | None = None,
            mode: str = "thread", session_timeout: float = 30.0) -> E2EResult:
    """Steps A, B, 1, 2, 3 and 4 against a fresh local deployment.

    Exit code 0 iff the vehicle grants access and the owner verifies the
    vehicle's confirmation.
    """
    if tamper is not None and tamper not in TAMPER_CHOICES:
        raise ValueError(f"tamper must be one of {TAMPER_CHOICES}")
    rng = random.Random(seed)
    workdir = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="hermes-e2e-"))
    dep = LocalDeployment(workdir, mode=mode, session_timeout=session_timeout, backends=(backend,))
    report: dict = {"backend": backend, "n_vehicles": n_vehicles, "tamper": tamper,
                    "revoke_after_publish": revoke_after_publish, "steps": {}}
    step = "setup"

    def done(code: int, detail: str) -> E2EResult:
        report.update(exit_code=code, failed_step=None if code == 0 else step, detail=detail)
        (workdir / "e2e.json").write_text(json.dumps(report, indent=2, sort_keys=True))
        return E2EResult(code, step, detail, workdir, report)

    def timed(name, fn, *a, **kw):
        t0 = time.perf_counter()
        out = fn(*a, **kw)
        report["steps"][name] = round(time.perf_counter() - t0, 6)
        return out

    try:
        dep.start()
        sessions = 2 if revoke_after_publish else 1
        dep.provision(backend, n_vehicles, sessions, m_blocks=m_block_count(ED25519))
        step = "A"
        fleet = timed("A", register_fleet, dep, "owner-1", n_vehicles, rng)
        step = "B"
        consumer_key = SigningKey.generate()
        cert = Certificate.issue("consumer-1", consumer_key)
        target = rng.choice(fleet.vehicle_ids)
        now = int(time.time())
        booking_id = rng.getrandbits(31) + 1
        bd = timed("B", agree_booking, fleet, target, cert, booking_id, now - 60, now + 3600)
        step = "1+2"
        booking = timed("1+2", request_token, dep, fleet, bd, backend, rng.getrandbits(128), 1, rng)
        report["ts"] = booking.ts
        step = "3"
        ledger = dep.ledger()
        if tamper in ("ledger-c", "ledger-tag"):
            ledger = _TamperingLedger(ledger, "c" if tamper == "ledger-c" else "tag",
                                      rng.getrandbits(16))
        try:
            at, vid = timed("3", step3_consumer, ledger, booking.keys, bd, backend, ts=booking.ts,
                            timeout=5.0, m_blocks=m_block_count(ED25519))
        except (TagMismatch, EntryNotFound, WireFormatError) as exc:
            return done(1, f"consumer rejected the ledger entry: {exc}")
        obu = fleet.obu(target, backend, lambda: int(time.time()))
        if revoke_after_publish:
            step = "revoke"
            revoked = bd.revoked_copy()
            owner_master = rng.getrandbits(128)
            upd = request_token(dep, fleet, revoked, backend, owner_master, 1, rng)
            at_rev, _ = step3_consumer(dep.ledger(), upd.keys, revoked, backend, ts=upd.ts, timeout=5.0)
            res = obu.install_update(encode_ct(backend, at_rev))
            report["revocation"] = {"ts": upd.ts, "installed": res.reason}
        step = "4"
        at_bytes = encode_ct(backend, at)
        cert_bytes = cert.to_bytes()
        if tamper == "at":
            at_bytes = _flip(at_bytes, rng.getrandbits(16))
        if tamper == "cert":
            cert_bytes = _flip(cert_bytes, rng.getrandbits(16))
        decision = timed("4", present, obu, consumer_key, at_bytes, vid, cert_bytes, bd.booking_id, UNLOCK)
        report["decision"] = decision.reason
        if not decision.granted:
            return done(1, f"vehicle refused access: {decision.reason}")
        step = "confirm"
        if not decision.confirmation.verify(bd, ED25519, fleet.obu_keys[target].public_bytes()):
            return done(1, "access confirmation does not verify")
        return done(0, "access granted and confirmation verified")
    except (ServerError, TimeoutError) as exc:
        return done(1, f"{type(exc).__name__}: {exc}")
    finally:
        dep.stop()


def new_master_key() -> int:
    return secrets.randbits(128)
