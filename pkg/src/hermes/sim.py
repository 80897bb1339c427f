"""Synthetic token sessions: realistic per-party inputs plus the cleartext reference.

Inputs are produced by the real Step A / Step 1 code paths (sharing, sealing,
request parsing), so a simulated Step 2 sees exactly what a server would.
"""
from __future__ import annotations

import random
from dataclasses import dataclass

from .protocol import messages as msg
from .protocol.booking import BookingDetails, Conditions, SignedBooking, UNLOCK
from .protocol.crypto import ED25519, Certificate, SealKey, SigningKey
from .protocol.oracle import OracleOutput, clear_oracle_lookup
from .protocol.roles import VmDatabase, step1_consumer, step1_owner, step_a_register
from .protocol.step2 import Step2Input, inputs_from_request, required_preprocessing, step2_program
from .protocol.wire import domain_of
from .repshare.engine import run_three
from .repshare.tape import PreprocessingTape, TapeCounts, dealer_generate

_SEAL_KEYS: list[SealKey] | None = None


def _seal_keys() -> list[SealKey]:
    global _SEAL_KEYS
    if _SEAL_KEYS is None:
        _SEAL_KEYS = [SealKey.generate() for _ in range(3)]
    return _SEAL_KEYS


@dataclass
class SimSession:
    backend: str
    n: int
    inputs: list[Step2Input]
    expected: OracleOutput
    target: int | None
    requests: list[msg.Message]


def make_session(backend: str, n: int, rng: random.Random | None = None, scheme: str = ED25519,
                 match: bool = True) -> SimSession:
    """One owner with ``n`` vehicles; the booking targets one of them (or none)."""
    rng = rng or random.Random()
    vm = VmDatabase()
    owner = "owner"
    vids = rng.sample(range(1, 2 ** 32), n + 1)
    rows: list[list] = [[], [], []]
    for v in vids[:n]:
        vm.add_vehicle(owner, v, rng.getrandbits(128))
        for i, r in enumerate(step_a_register(vm, owner, v, rng)):
            rows[i].append(r)
    target = rng.choice(vids[:n]) if (match and n) else vids[n]
    owner_key = SigningKey.generate(scheme)
    cert = Certificate.issue("consumer", SigningKey.generate())
    booking_id = rng.getrandbits(32)
    start = rng.getrandbits(31)
    bd = BookingDetails(cert.digest(), target, rng.getrandbits(64),
                        Conditions(start, start + 1 + rng.getrandbits(20)), UNLOCK, booking_id)
    seal = _seal_keys()
    ack, keys = step1_consumer(rng.getrandbits(128), rng.getrandbits(32) + 1, booking_id,
                               [k.public_bytes() for k in seal], backend, rng=rng)
    ack = msg.from_bytes(ack.to_bytes())
    reqs = [msg.from_bytes(m.to_bytes())
            for m in step1_owner(bd, owner_key, ack, owner, backend, rng=rng)]
    inputs = [inputs_from_request(reqs[i], i, seal[i], rows[i]) for i in range(3)]
    signed = SignedBooking.sign(bd, owner_key)
    table = [(r.vehicle_id, r.k_veh) for r in vm.owner_rows(owner)]
    expected = clear_oracle_lookup(backend, keys, signed.blocks(), target, table, booking_id)
    return SimSession(backend, n, inputs, expected, target if match else None, reqs)


def session_tapes(backend: str, n: int, m_blocks: int = 10, seed=None) -> list[PreprocessingTape]:
    seed = random.getrandbits(64) if seed is None else seed
    return dealer_generate(required_preprocessing(backend, n, m_blocks), seed, domain_of(backend))


def rewind(tape: PreprocessingTape) -> PreprocessingTape:
    """Reset a tape to unused.  Benchmark only: real tapes are never reused."""
    tape.used = TapeCounts()
    tape.__post_init__()
    return tape


def run_step2(s: SimSession, tapes: list[PreprocessingTape] | None = None, timeout: float = 600.0):
    """Run the three parties in-process; returns (outputs, parties)."""
    m_blocks = len(s.inputs[0].m)
    tapes = tapes or session_tapes(s.backend, s.n, m_blocks)
    return run_three(lambda p: [step2_program(p, s.inputs[p.party_id])], tapes, timeout=timeout)
