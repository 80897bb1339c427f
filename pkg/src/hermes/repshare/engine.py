"""Layer-batching driver for one party's side of a 3-party computation.

MPC programs are generators.  A program yields a communication *request*
(``Mul``, ``Open``, ``And``, ...) and is resumed with its result, or yields
``Fork(g1, g2, ...)`` to run sub-programs side by side and is resumed with
their return values.  The driver advances every runnable program until all
of them are blocked on a request, then ships all pending requests as one
layer.  Independent branches therefore share rounds automatically, and the
round count equals the dependency depth of the program.

All three parties must run the same programs in the same order; every
request is symmetric, so each party knows how many bytes to expect back.
"""
from __future__ import annotations

import threading
import time
from collections import deque
from typing import Callable, Iterable, Sequence

from ..field import FieldParams
from ..transport import LocalHub, SessionAbort, SessionChannel, new_session_id
from .shares import BIT, IntegrityError, RepShare
from .tape import PreprocessingTape

PRED, SUCC = -1, 1


class Fork:
    def __init__(self, *programs):
        self.programs = programs


class Request:
    """One batched communication step.  Subclasses define the wire contract."""

    send_dirs: tuple[int, ...] = ()

    def payloads(self, party: "Party") -> dict[int, bytes]:
        raise NotImplementedError

    def incoming(self, party: "Party") -> dict[int, int]:
        """Bytes expected back, keyed by direction the data comes *from*."""
        raise NotImplementedError

    def finish(self, party: "Party", data: dict[int, bytes]):
        raise NotImplementedError


class Mul(Request):
    """Elementwise product of shared vectors (local cross terms + reshare)."""

    send_dirs = (PRED,)

    def __init__(self, xs: Sequence[RepShare], ys: Sequence[RepShare]):
        if len(xs) != len(ys):
            raise ValueError("operand lengths differ")
        self.xs, self.ys = xs, ys

    def payloads(self, party):
        f = party.field
        p = f.p
        alpha = party.tape.zero_field(len(self.xs))
        self.t = [(x.lo * y.lo + x.lo * y.hi + x.hi * y.lo + a) % p
                  for x, y, a in zip(self.xs, self.ys, alpha)]
        party.stats.mults += len(self.xs)
        party.stats.preprocessing_consumed["zero_shares"] += len(self.xs)
        return {PRED: f.encode_many(self.t)}

    def incoming(self, party):
        return {SUCC: len(self.xs) * party.field.byte_len}

    def finish(self, party, data):
        nxt = party.field.decode_many(data[SUCC])
        i, f = party.party_id, party.field
        return [RepShare(i, t, u, f) for t, u in zip(self.t, nxt)]


class Open(Request):
    """Reveal shared values to every party (one element per value per party)."""

    send_dirs = (SUCC,)

    def __init__(self, xs: Sequence[RepShare], verify: bool = False):
        self.xs = xs
        self.verify = verify
        if verify:
            self.send_dirs = (SUCC, PRED)

    def payloads(self, party):
        f = party.field
        party.stats.opens += len(self.xs)
        out = {SUCC: f.encode_many(x.lo for x in self.xs)}
        if self.verify:
            out[PRED] = f.encode_many(x.hi for x in self.xs)
        return out

    def incoming(self, party):
        n = len(self.xs) * party.field.byte_len
        return {PRED: n, SUCC: n} if self.verify else {PRED: n}

    def finish(self, party, data):
        f = party.field
        missing = f.decode_many(data[PRED])
        if self.verify:
            # the successor's hi is r_{i+2}, the same component the predecessor sent
            again = f.decode_many(data[SUCC])
            if again != missing:
                raise IntegrityError(f"party {party.party_id}: inconsistent opening")
        p = f.p
        return [(x.lo + x.hi + m) % p for x, m in zip(self.xs, missing)]


def _pack(values: Iterable[int], nbytes: int) -> int:
    return int.from_bytes(b"".join(v.to_bytes(nbytes, "little") for v in values), "little")


def _unpack(big: int, count: int, nbytes: int) -> list[int]:
    raw = big.to_bytes(count * nbytes, "little")
    return [int.from_bytes(raw[k * nbytes:(k + 1) * nbytes], "little") for k in range(count)]


class And(Request):
    """Batched AND gates over GF(2); every operand packs ``width`` lanes."""

    send_dirs = (PRED,)

    def __init__(self, x_lo, x_hi, y_lo, y_hi, width: int):
        self.n = len(x_lo)
        self.width = width
        self.nbytes = (width + 7) // 8
        self.args = (x_lo, x_hi, y_lo, y_hi)

    def payloads(self, party):
        nb, n = self.nbytes, self.n
        xl, xh, yl, yh = (_pack(a, nb) for a in self.args)
        mask = _pack([(1 << self.width) - 1] * n, nb)
        tape = party.bit_tape or party.tape
        alpha = tape.zero_bits(n * nb, n * self.width) & mask
        self.t = (xl & yl) ^ (xl & yh) ^ (xh & yl) ^ alpha
        party.stats.and_gates += n * self.width
        party.stats.preprocessing_consumed["zero_shares"] += n * self.width
        return {PRED: self.t.to_bytes(n * nb, "little")}

    def incoming(self, party):
        return {SUCC: self.n * self.nbytes}

    def finish(self, party, data):
        nxt = int.from_bytes(data[SUCC], "little")
        return _unpack(self.t, self.n, self.nbytes), _unpack(nxt, self.n, self.nbytes)


class OpenBits(Request):
    send_dirs = (SUCC,)

    def __init__(self, lo: Sequence[int], hi: Sequence[int], width: int):
        self.lo, self.hi, self.width = lo, hi, width
        self.nbytes = (width + 7) // 8

    def payloads(self, party):
        party.stats.opens += len(self.lo)
        return {SUCC: b"".join(v.to_bytes(self.nbytes, "little") for v in self.lo)}

    def incoming(self, party):
        return {PRED: len(self.lo) * self.nbytes}

    def finish(self, party, data):
        raw, nb = data[PRED], self.nbytes
        missing = [int.from_bytes(raw[k * nb:(k + 1) * nb], "little") for k in range(len(self.lo))]
        return [a ^ b ^ m for a, b, m in zip(self.lo, self.hi, missing)]


class _Task:
    __slots__ = ("gen", "parent", "slot", "value", "request", "pending", "results")

    def __init__(self, gen, parent, slot):
        self.gen, self.parent, self.slot = gen, parent, slot
        self.value = None
        self.request = None
        self.pending = 0
        self.results = None


class Party:
    """One party's MPC context: id, channel, preprocessing tape, field."""

    def __init__(self, party_id: int, channel: SessionChannel, tape: PreprocessingTape | None = None,
                 field: FieldParams | None = None, bit_tape: PreprocessingTape | None = None):
        self.party_id = party_id
        self.channel = channel
        self.tape = tape
        self.bit_tape = bit_tape
        self.field = field if field is not None else (tape.domain if tape else None)
        self.stats = channel.stats
        self._dir = {PRED: (party_id - 1) % 3, SUCC: (party_id + 1) % 3}

    def const(self, value: int) -> RepShare:
        return RepShare(self.party_id, 0, 0, self.field).add_const(value)

    def run(self, *programs):
        t0 = time.perf_counter()
        out = [None] * len(programs)
        runnable: deque[_Task] = deque(_Task(g, None, i) for i, g in enumerate(programs))
        blocked: list[_Task] = []
        while runnable or blocked:
            while runnable:
                self._advance(runnable.popleft(), runnable, blocked, out)
            if blocked:
                results = self._exchange([t.request for t in blocked])
                for t, r in zip(blocked, results):
                    t.value, t.request = r, None
                runnable.extend(blocked)
                blocked = []
        self.stats.wall_time += time.perf_counter() - t0
        return out

    def _advance(self, task, runnable, blocked, out):
        try:
            y = task.gen.send(task.value)
        except StopIteration as stop:
            self._deliver(task, stop.value, runnable, out)
            return
        task.value = None
        if isinstance(y, Request):
            task.request = y
            blocked.append(task)
        elif isinstance(y, Fork):
            task.pending = len(y.programs)
            task.results = [None] * task.pending
            if not task.pending:
                task.value = []
                runnable.append(task)
            for k, g in enumerate(y.programs):
                runnable.append(_Task(g, task, k))
        else:
            raise TypeError(f"MPC program yielded {y!r}")

    @staticmethod
    def _deliver(task, value, runnable, out):
        parent = task.parent
        if parent is None:
            out[task.slot] = value
            return
        parent.results[task.slot] = value
        parent.pending -= 1
        if parent.pending == 0:
            parent.value, parent.results = parent.results, None
            runnable.append(parent)

    def _exchange(self, requests: list[Request]):
        send: dict[int, list[bytes]] = {}
        expect: dict[int, list[int]] = {}
        for req in requests:
            for d, payload in req.payloads(self).items():
                send.setdefault(d, []).append(payload)
            for d, n in req.incoming(self).items():
                expect.setdefault(d, []).append(n)
        outgoing = {self._dir[d]: b"".join(parts) for d, parts in send.items()}
        got = self.channel.send_layer(outgoing, expect=tuple(self._dir[d] for d in expect))
        cursor = {d: 0 for d in expect}
        results = []
        for req in requests:
            pieces = {}
            for d, n in req.incoming(self).items():
                buf = got[self._dir[d]]
                pieces[d] = buf[cursor[d]:cursor[d] + n]
                cursor[d] += n
            results.append(req.finish(self, pieces))
        for d, buf_peer in ((d, self._dir[d]) for d in expect):
            if cursor[d] != len(got[buf_peer]):
                raise SessionAbort("trailing bytes in layer frame", buf_peer)
        return results


def run_three(make_programs: Callable[[Party], Sequence], tapes: Sequence[PreprocessingTape | None],
              field: FieldParams | None = None, hub: LocalHub | None = None,
              session_id: bytes | None = None, timeout: float = 60.0, record: bool = False,
              bit_tapes: Sequence[PreprocessingTape | None] | None = None):
    """Run the same programs at three parties over an in-process fabric.

    Returns ``(results_per_party, parties)``; the first party exception is re-raised.
    """
    hub = hub or LocalHub()
    sid = session_id or new_session_id()
    bit_tapes = bit_tapes or [None, None, None]
    parties = [Party(i, hub.connect(sid, i, timeout=timeout, record=record), tapes[i], field,
                     bit_tapes[i]) for i in range(3)]
    results: list = [None] * 3
    errors: list = [None] * 3

    def work(i):
        try:
            results[i] = parties[i].run(*make_programs(parties[i]))
        except BaseException as exc:  # surfaced below
            errors[i] = exc
            hub.abort_session(sid)

    threads = [threading.Thread(target=work, args=(i,), daemon=True) for i in range(3)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    hub.drop_session(sid)
    # report the root cause, not the peers' follow-on aborts
    primary = [e for e in errors if e is not None and not isinstance(e, SessionAbort)]
    if primary:
        raise primary[0]
    if any(errors):
        raise next(e for e in errors if e is not None)
    return results, parties
