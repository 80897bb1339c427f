"""Instrumented party-to-party messaging for the three servers.

Two fabrics share one frame format and one ``SessionChannel`` contract:

* ``LocalHub`` -- in-process queues, used by tests and the benchmark.
* ``TcpFabric`` -- one duplex socket per party pair, frames demultiplexed by
  session id, so many sessions can share a connection.

A *layer* is one call to ``SessionChannel.send_layer``: every payload a party
has for one dependency layer travels in a single frame per destination, and
the round counter moves by one no matter how large the payloads are.
"""
from __future__ import annotations

import logging
import os
import queue
import socket
import struct
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

log = logging.getLogger(__name__)

MAGIC = b"HMF1"
HEADER = struct.Struct("<4sIB16sI")
HEADER_SIZE = HEADER.size  # 29

MSG_DATA = 1
MSG_HELLO = 2
MSG_ABORT = 3

HELLO_LAYER = 0xFFFFFFFF
SALT_LEN = 16


class TransportError(RuntimeError):
    pass


class SessionAbort(TransportError):
    """Peer disconnected, timed out, or asked to abort."""

    def __init__(self, msg: str, party: int | None = None):
        super().__init__(msg if party is None else f"party {party}: {msg}")
        self.party = party


class ProtocolDesync(TransportError):
    pass


class ConnectError(TransportError):
    def __init__(self, msg: str, party: int):
        super().__init__(f"party {party}: {msg}")
        self.party = party


def encode_frame(msg_type: int, session_id: bytes, layer: int, payload: bytes) -> bytes:
    return HEADER.pack(MAGIC, len(payload), msg_type, session_id, layer) + payload


def decode_header(data: bytes) -> tuple[int, int, bytes, int]:
    magic, length, msg_type, sid, layer = HEADER.unpack(data[:HEADER_SIZE])
    if magic != MAGIC:
        raise ProtocolDesync(f"bad frame magic {magic!r}")
    return length, msg_type, sid, layer


def decode_frame(data: bytes) -> tuple[int, bytes, int, bytes]:
    length, msg_type, sid, layer = decode_header(data)
    payload = data[HEADER_SIZE:]
    if len(payload) != length:
        raise ProtocolDesync("frame length mismatch")
    return msg_type, sid, layer, payload


@dataclass
class TranscriptStats:
    """Per-party counters for one session.  All counters only grow."""

    online_rounds: int = 0
    bytes_sent: int = 0
    payload_bytes: int = 0
    header_bytes: int = 0
    frames: int = 0
    messages: int = 0
    mults: int = 0
    and_gates: int = 0
    opens: int = 0
    cubes: int = 0
    preprocessing_consumed: dict = field(
        default_factory=lambda: {"zero_shares": 0, "random_bits": 0, "cube_triples": 0})
    wall_time: float = 0.0

    def as_dict(self) -> dict:
        return {
            "online_rounds": self.online_rounds,
            "bytes_sent": self.bytes_sent,
            "payload_bytes": self.payload_bytes,
            "header_bytes": self.header_bytes,
            "frames": self.frames,
            "messages": self.messages,
            "mults": self.mults,
            "and_gates": self.and_gates,
            "opens": self.opens,
            "cubes": self.cubes,
            "preprocessing_consumed": dict(self.preprocessing_consumed),
            "wall_time": self.wall_time,
        }


class SessionChannel:
    """One party's view of one session.  Not thread safe; one driver per channel."""

    header_size = HEADER_SIZE

    def __init__(self, session_id: bytes, party_id: int, timeout: float = 30.0,
                 record: bool = False):
        if len(session_id) != 16:
            raise ValueError("session_id must be 16 bytes")
        self.session_id = session_id
        self.party_id = party_id
        self.peers = tuple(j for j in range(3) if j != party_id)
        self.timeout = timeout
        self.layer = 0
        self.stats = TranscriptStats()
        self.transcript: list[tuple[str, int, bytes]] | None = [] if record else None

    # fabric hooks
    def _send_frame(self, dst: int, frame: bytes) -> None:
        raise NotImplementedError

    def _recv_frame(self, src: int, timeout: float) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def _recv(self, src: int, want_type: int, want_layer: int) -> bytes:
        frame = self._recv_frame(src, self.timeout)
        msg_type, sid, layer, payload = decode_frame(frame)
        if sid != self.session_id:
            raise ProtocolDesync("frame for another session")
        if msg_type == MSG_ABORT:
            raise SessionAbort(payload.decode(errors="replace") or "aborted by peer", src)
        if msg_type != want_type or layer != want_layer:
            raise ProtocolDesync(
                f"party {self.party_id}: expected layer {want_layer} type {want_type} from {src}, "
                f"got layer {layer} type {msg_type}")
        if self.transcript is not None:
            self.transcript.append(("recv", src, frame))
        return payload

    def handshake(self, info: bytes) -> dict[int, bytes]:
        """Exchange session parameters; not counted as an online round."""
        frame = encode_frame(MSG_HELLO, self.session_id, HELLO_LAYER, info)
        for dst in self.peers:
            self._send_frame(dst, frame)
        return {src: self._recv(src, MSG_HELLO, HELLO_LAYER) for src in self.peers}

    def send_layer(self, outgoing: dict[int, bytes], expect: tuple[int, ...] | None = None
                   ) -> dict[int, bytes]:
        """Send one frame per destination and collect one frame per expected peer.

        ``expect`` defaults to the destinations.  A layer with nothing to send
        and nothing to receive is a no-op and does not count as a round.
        """
        expect = tuple(outgoing) if expect is None else tuple(expect)
        if not outgoing and not expect:
            return {}
        st = self.stats
        for dst, payload in outgoing.items():
            if dst not in self.peers:
                raise ValueError(f"{dst} is not a peer of {self.party_id}")
            frame = encode_frame(MSG_DATA, self.session_id, self.layer, payload)
            self._send_frame(dst, frame)
            if self.transcript is not None:
                self.transcript.append(("send", dst, frame))
            st.frames += 1
            st.messages += 1
            st.payload_bytes += len(payload)
            st.header_bytes += self.header_size
            st.bytes_sent += len(payload) + self.header_size
        received = {src: self._recv(src, MSG_DATA, self.layer) for src in expect}
        self.layer += 1
        st.online_rounds += 1
        return received

    def abort(self, reason: str) -> None:
        frame = encode_frame(MSG_ABORT, self.session_id, self.layer, reason.encode())
        for dst in self.peers:
            try:
                self._send_frame(dst, frame)
            except Exception:  # peer may already be gone
                pass


# ----------------------------------------------------------------------------
# in-process fabric


class LocalHub:
    """Queues keyed by (session, src, dst)."""

    def __init__(self):
        self._queues: dict[tuple, queue.Queue] = defaultdict(queue.Queue)
        self._lock = threading.Lock()
        self._aborted: set[bytes] = set()

    def _q(self, sid: bytes, src: int, dst: int) -> queue.Queue:
        with self._lock:
            return self._queues[(sid, src, dst)]

    def abort_session(self, sid: bytes) -> None:
        self._aborted.add(sid)

    def drop_session(self, sid: bytes) -> None:
        with self._lock:
            for key in [k for k in self._queues if k[0] == sid]:
                del self._queues[key]
        self._aborted.discard(sid)

    def connect(self, session_id: bytes, party_id: int, **kw) -> "LocalChannel":
        return LocalChannel(self, session_id, party_id, **kw)


def connect_local(hub: LocalHub, session_id: bytes, party_id: int, **kw) -> "LocalChannel":
    return hub.connect(session_id, party_id, **kw)


class LocalChannel(SessionChannel):
    def __init__(self, hub: LocalHub, session_id: bytes, party_id: int, **kw):
        super().__init__(session_id, party_id, **kw)
        self.hub = hub

    def _send_frame(self, dst, frame):
        self.hub._q(self.session_id, self.party_id, dst).put(frame)

    def _recv_frame(self, src, timeout):
        q = self.hub._q(self.session_id, src, self.party_id)
        deadline = time.monotonic() + timeout
        while True:
            if self.session_id in self.hub._aborted:
                raise SessionAbort("session aborted", src)
            try:
                return q.get(timeout=min(0.05, max(0.0, deadline - time.monotonic())))
            except queue.Empty:
                if time.monotonic() >= deadline:
                    raise SessionAbort("timed out waiting for peer", src) from None


# ----------------------------------------------------------------------------
# TCP fabric


def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed connection")
        buf += chunk
    return bytes(buf)


class _AeadLink:
    """AES-GCM wrapping of one peer link; nonces are per-direction counters.

    Stats still count the inner frames, so byte figures stay protocol-only.
    """

    def __init__(self, secret: bytes, me: int, peer: int, salt: bytes):
        self._out = AESGCM(_link_key(secret, me, peer, salt))
        self._in = AESGCM(_link_key(secret, peer, me, salt))
        self._sent = 0
        self._received = 0

    def seal(self, frame: bytes) -> bytes:
        nonce = self._sent.to_bytes(12, "little")
        self._sent += 1
        return self._out.encrypt(nonce, frame, None)

    def open(self, data: bytes) -> bytes:
        nonce = self._received.to_bytes(12, "little")
        self._received += 1
        try:
            return self._in.decrypt(nonce, data, None)
        except InvalidTag as exc:
            raise TransportError("link authentication failed") from exc


def _link_key(secret: bytes, src: int, dst: int, salt: bytes) -> bytes:
    # fresh salts per connection keep counter nonces unique across reconnects
    return HKDF(hashes.SHA256(), 16, salt=salt, info=b"HERMES-LINK-v1" + bytes([src, dst])).derive(secret)


class TcpFabric:
    """Party ``party_id``'s end of the 3-party mesh.

    For each pair (i, j) with i < j, party j dials party i and announces itself
    with ``b"HMH1" + party byte + salt``; the peer answers with its own salt
    and both salts key that connection's link.  A reader thread per peer routes
    frames into per-session queues; sessions then pull from them.  The listener keeps
    accepting, and a lower-numbered peer is re-dialled on demand, so a peer that
    restarts rejoins for later sessions.  Sessions in flight when a link drops
    abort.
    """

    def __init__(self, party_id: int, addresses: list[str], timeout: float = 30.0,
                 use_aead: bool = False, link_secret: bytes | None = None):
        if len(addresses) != 3:
            raise ValueError("need exactly three party addresses")
        if use_aead and not link_secret:
            raise ValueError("authenticated links need a shared link secret")
        self.use_aead = use_aead
        self._link_secret = link_secret
        self.party_id = party_id
        self.addresses = addresses
        self.timeout = timeout
        self._socks: dict[int, socket.socket] = {}
        self._links: dict[int, _AeadLink] = {}
        self._epoch = {j: 0 for j in range(3)}
        self._attached = threading.Condition()
        self._send_locks = {j: threading.Lock() for j in range(3)}
        self._dial_locks = {j: threading.Lock() for j in range(3)}
        self._inbox: dict[tuple[bytes, int], queue.Queue] = defaultdict(queue.Queue)
        self._inbox_lock = threading.Lock()
        self._dead: dict[int, str] = {}
        self._listener: socket.socket | None = None
        self._closed = False

    @property
    def peers(self) -> list[int]:
        return [j for j in range(3) if j != self.party_id]

    def _box(self, sid: bytes, src: int) -> queue.Queue:
        with self._inbox_lock:
            return self._inbox[(sid, src)]

    def start(self) -> "TcpFabric":
        """Bind, start accepting and dial lower parties (best effort)."""
        host, port = parse_addr(self.addresses[self.party_id])
        lst = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        lst.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        lst.bind((host, port))
        lst.listen(8)
        self._listener = lst
        threading.Thread(target=self._accept_loop, daemon=True).start()
        for j in range(self.party_id):
            threading.Thread(target=self._try_redial, args=(j,), daemon=True).start()
        return self

    def _try_redial(self, j: int) -> None:
        while not self._closed:
            try:
                self._redial(j)
                return
            except ConnectError as exc:
                with self._attached:
                    self._dead.setdefault(j, str(exc))

    def _redial(self, j: int) -> None:
        with self._dial_locks[j]:
            with self._attached:
                if j in self._socks:
                    return
            self._attach(j, *self._dial(j, self.timeout))

    def wait_ready(self, timeout: float | None = None) -> "TcpFabric":
        deadline = time.monotonic() + (self.timeout if timeout is None else timeout)
        with self._attached:
            while True:
                missing = [j for j in self.peers if j not in self._socks]
                if not missing:
                    return self
                left = deadline - time.monotonic()
                if left <= 0:
                    j = missing[0]
                    raise ConnectError(self._dead.get(j, "peer never connected"), j)
                self._attached.wait(min(left, 0.1))

    def _accept_loop(self) -> None:
        lst = self._listener
        while not self._closed:
            try:
                conn, _ = lst.accept()
            except OSError:
                return
            try:
                conn.settimeout(5.0)
                hello = _recv_exact(conn, 5 + SALT_LEN)
                if hello[:4] != b"HMH1" or hello[4] <= self.party_id or hello[4] > 2:
                    conn.close()
                    continue
                mine = os.urandom(SALT_LEN)
                conn.sendall(mine)
                conn.settimeout(None)
            except (OSError, ConnectionError):
                conn.close()
                continue
            self._attach(hello[4], conn, hello[5:] + mine)

    def _dial(self, j: int, timeout: float) -> tuple[socket.socket, bytes]:
        host, port = parse_addr(self.addresses[j])
        deadline = time.monotonic() + timeout
        while True:
            try:
                s = socket.create_connection((host, port), timeout=2.0)
                mine = os.urandom(SALT_LEN)
                s.sendall(b"HMH1" + bytes([self.party_id]) + mine)
                theirs = _recv_exact(s, SALT_LEN)
                s.settimeout(None)
                return s, mine + theirs
            except (OSError, ConnectionError) as exc:
                if time.monotonic() > deadline or self._closed:
                    raise ConnectError(f"cannot reach {self.addresses[j]}: {exc}", j) from exc
                time.sleep(0.05)

    def _attach(self, j: int, sock: socket.socket, salt: bytes) -> None:
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        with self._attached:
            if self._closed:
                sock.close()
                return
            old = self._socks.get(j)
            self._socks[j] = sock
            link = _AeadLink(self._link_secret, self.party_id, j, salt) if self.use_aead else None
            self._links[j] = link
            self._epoch[j] += 1
            epoch = self._epoch[j]
            self._dead.pop(j, None)
            self._attached.notify_all()
        if old is not None:
            try:
                old.close()
            except OSError:
                pass
        threading.Thread(target=self._reader, args=(j, sock, link, epoch), daemon=True).start()

    def _reader(self, j: int, sock: socket.socket, link: _AeadLink | None, epoch: int) -> None:
        try:
            while True:
                if link is not None:
                    (n,) = struct.unpack("<I", _recv_exact(sock, 4))
                    frame = link.open(_recv_exact(sock, n))
                    _, _, sid, _ = decode_header(frame[:HEADER_SIZE])
                    self._box(sid, j).put(frame)
                    continue
                head = _recv_exact(sock, HEADER_SIZE)
                length, _, sid, _ = decode_header(head)
                self._box(sid, j).put(head + _recv_exact(sock, length))
        except (OSError, ConnectionError, TransportError) as exc:
            if not self._closed:
                log.debug("reader for party %d stopped: %s", j, exc)
            with self._attached:
                if self._epoch[j] == epoch:
                    self._dead[j] = str(exc) or "connection closed"
                    if self._socks.get(j) is sock:
                        del self._socks[j]
            if j < self.party_id and not self._closed:
                threading.Thread(target=self._try_redial, args=(j,), daemon=True).start()

    def _socket_for(self, dst: int) -> tuple[socket.socket, _AeadLink | None]:
        with self._attached:
            sock = self._socks.get(dst)
            if sock is not None:
                return sock, self._links.get(dst)
        if dst < self.party_id:
            self._redial(dst)
        deadline = time.monotonic() + self.timeout
        with self._attached:
            while dst not in self._socks:
                left = deadline - time.monotonic()
                if left <= 0:
                    raise SessionAbort(self._dead.get(dst, "peer not connected"), dst)
                self._attached.wait(min(left, 0.1))
            return self._socks[dst], self._links.get(dst)

    def send(self, dst: int, frame: bytes) -> None:
        try:
            sock, link = self._socket_for(dst)
            with self._send_locks[dst]:
                if link is not None:
                    sealed = link.seal(frame)
                    frame = struct.pack("<I", len(sealed)) + sealed
                sock.sendall(frame)
        except ConnectError as exc:
            raise SessionAbort(str(exc), dst) from exc
        except OSError as exc:
            raise SessionAbort(f"send failed: {exc}", dst) from exc

    def recv(self, sid: bytes, src: int, timeout: float) -> bytes:
        box = self._box(sid, src)
        deadline = time.monotonic() + timeout
        with self._attached:
            epoch = self._epoch[src]
        while True:
            try:
                return box.get(timeout=min(0.1, max(0.0, deadline - time.monotonic())))
            except queue.Empty:
                with self._attached:
                    dropped = src in self._dead and self._epoch[src] == epoch and epoch > 0
                if dropped and src not in self._socks:
                    raise SessionAbort(f"peer disconnected: {self._dead[src]}", src) from None
                if time.monotonic() >= deadline:
                    raise SessionAbort("timed out waiting for peer", src) from None

    def drop_session(self, sid: bytes) -> None:
        with self._inbox_lock:
            for key in [k for k in self._inbox if k[0] == sid]:
                del self._inbox[key]

    def channel(self, session_id: bytes, **kw) -> "TcpChannel":
        return TcpChannel(self, session_id, self.party_id, **kw)

    def close(self) -> None:
        with self._attached:
            self._closed = True
            socks = list(self._socks.values())
        if self._listener is not None:
            try:
                self._listener.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._listener.close()
        for s in socks:
            try:
                s.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            s.close()


def connect_tcp(party_id: int, addresses: list[str], tls_off: bool = True, timeout: float = 30.0,
                link_secret: bytes | None = None) -> TcpFabric:
    fabric = TcpFabric(party_id, addresses, timeout=timeout, use_aead=not tls_off,
                       link_secret=link_secret).start()
    try:
        return fabric.wait_ready()
    except ConnectError:
        fabric.close()
        raise


class TcpChannel(SessionChannel):
    def __init__(self, fabric: TcpFabric, session_id: bytes, party_id: int, **kw):
        kw.setdefault("timeout", fabric.timeout)
        super().__init__(session_id, party_id, **kw)
        self.fabric = fabric

    def _send_frame(self, dst, frame):
        self.fabric.send(dst, frame)

    def _recv_frame(self, src, timeout):
        return self.fabric.recv(self.session_id, src, timeout)

    def close(self):
        self.fabric.drop_session(self.session_id)


def new_session_id() -> bytes:
    return os.urandom(16)
