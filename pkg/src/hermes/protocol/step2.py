"""Token generation over shares, run by each of the three servers.

Per party the inputs are shares only: the session keys (and, for the
arithmetic backend, the two one-shot CTR tweaks), the signed-booking blocks
[M], the vehicle id block [ID] and the owner's registered rows
([vehicle_id], [K_veh]).  The public outputs are C^{u_c} and the tag.

Arithmetic (``mimc``) pipeline, with independent branches sharing rounds::

    eq_y   = eqz([ID], [vid_y])                 9 rounds, all rows parallel
    [Kveh] = sum eq_y [K_y]                      1 round
    [AT]   = CTR(Kveh, eta=booking_id, [M])      2r rounds (tweak, keystream)
    [C]    = [AT || ID] + keystream(K_enc)       keystream runs from round 1
    C      = open([C])                           1 round
    tag    = HtMAC(K_tag_enc, K_tag_mac, [BD])   runs alongside

Boolean (``aes``) pipeline: 32-bit equality and 128-bit selection, AES-CTR
for AT and C (keystreams in parallel), CBC-MAC over BD under K_tag_mac.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from ..boolcirc import aes_circuit
from ..boolcirc.shared import aes_ctr_shared, aes_shared, bit_const, cbc_mac_shared, counter_block
from ..boolcirc.shared import equality_select_binary
from ..field import PROD
from ..mimc import SESSION_NONCE, TaggedCiphertext, ctr_encrypt_shared, ctr_keystream_shared
from ..mimc import htmac_tag_shared
from ..repshare.engine import Fork, Open, OpenBits, Party
from ..repshare.ops import EqzConfig, eqz_pairs, select_key
from ..repshare.shares import RepShare
from ..repshare.tape import TapeCounts
from .crypto import SealError, SealKey
from .messages import AT_GEN_REQ, Message
from .wire import (AES, MIMC, RegistrationRow, WireFormatError, check_backend, decode_shares,
                   key_bundle_aad)

BD_BLOCKS = 6
AES_AND = 6400
ID_MASK = (1 << 32) - 1

# key bundle layout inside C^{S_i}
MIMC_KEYS = ("k_enc", "k_tag_enc", "k_tag_mac", "tweak_enc", "tweak_tag")
AES_KEYS = ("k_enc", "k_tag_mac")


def key_names(backend: str) -> tuple[str, ...]:
    return MIMC_KEYS if check_backend(backend) == MIMC else AES_KEYS


@dataclass
class Step2Input:
    """One party's view of a token-generation session."""

    backend: str
    booking_id: int
    keys: list[RepShare]
    m: list[RepShare]
    vid: RepShare
    rows: list[tuple[RepShare, RepShare]] = field(default_factory=list)
    eqz: EqzConfig = field(default_factory=EqzConfig)

    def validate(self) -> None:
        check_backend(self.backend)
        if len(self.keys) != len(key_names(self.backend)):
            raise ValueError("wrong number of session key shares")
        if len(self.m) < BD_BLOCKS:
            raise ValueError("signed booking shorter than the booking details")


@dataclass(frozen=True)
class Step2Output:
    c: TaggedCiphertext
    tag: int


def step2_program(party: Party, x: Step2Input):
    """Engine program; returns :class:`Step2Output`."""
    x.validate()
    if x.backend == MIMC:
        return (yield from _mimc_pipeline(party, x))
    return (yield from _aes_pipeline(party, x))


def _mimc_pipeline(party: Party, x: Step2Input):
    k_enc, k_tag_enc, k_tag_mac, tweak_enc, tweak_tag = x.keys
    n_out = len(x.m) + 1

    def vehicle_layer():
        if x.rows:
            eqs = yield from eqz_pairs(party, [x.vid] * len(x.rows), [r[0] for r in x.rows], x.eqz)
            (k_veh,) = yield from select_key(party, eqs, [[r[1]] for r in x.rows])
        else:
            k_veh = party.const(0)
        return (yield from ctr_encrypt_shared(party, k_veh, x.booking_id, x.m))

    def consumer_keystream():
        return (yield from ctr_keystream_shared(party, k_enc, tweak_enc, n_out))

    def tag():
        t, _ = yield from htmac_tag_shared(party, k_tag_enc, k_tag_mac, x.m[:BD_BLOCKS], tweak_tag)
        return t

    def consumer_layer():
        at, ks = yield Fork(vehicle_layer(), consumer_keystream())
        return (yield Open([a + s for a, s in zip(at + [x.vid], ks)]))

    c, t = yield Fork(consumer_layer(), tag())
    return Step2Output(TaggedCiphertext(SESSION_NONCE, tuple(c)), t)


def _open_blocks(party: Party, shares: Sequence[RepShare]):
    return (yield OpenBits([s.lo for s in shares], [s.hi for s in shares], 128))


def _aes_pipeline(party: Party, x: Step2Input):
    k_enc, k_tag_mac = x.keys
    circ = aes_circuit()
    n_out = len(x.m) + 1
    pid = party.party_id

    def vehicle_layer():
        target = RepShare(pid, x.vid.lo & ID_MASK, x.vid.hi & ID_MASK, x.vid.domain)
        ids = [RepShare(pid, r[0].lo & ID_MASK, r[0].hi & ID_MASK, r[0].domain) for r in x.rows]
        k_veh = yield from equality_select_binary(party, target, ids, [r[1] for r in x.rows])
        return (yield from aes_ctr_shared(party, circ, k_veh, x.booking_id, x.m))

    def consumer_keystream():
        ctrs = [bit_const(party, counter_block(SESSION_NONCE, j)) for j in range(1, n_out + 1)]
        return (yield from aes_shared(party, circ, [k_enc] * n_out, ctrs))

    def tag():
        t = yield from cbc_mac_shared(party, circ, k_tag_mac, x.m[:BD_BLOCKS])
        (v,) = yield from _open_blocks(party, [t])
        return v

    def consumer_layer():
        at, ks = yield Fork(vehicle_layer(), consumer_keystream())
        return (yield from _open_blocks(party, [a + s for a, s in zip(at + [x.vid], ks)]))

    c, t = yield Fork(consumer_layer(), tag())
    return Step2Output(TaggedCiphertext(SESSION_NONCE, tuple(c)), t)


# ---------------------------------------------------------------------------
# cost model


def aes_calls(m_blocks: int = 10) -> int:
    """AT layer + C layer (AT blocks and the id block) + CBC-MAC over BD."""
    return m_blocks + (m_blocks + 1) + BD_BLOCKS


def mimc_calls(m_blocks: int = 10) -> int:
    """Vehicle tweak + AT keystream + C keystream + tag keystream + final tag PRF."""
    return 1 + m_blocks + (m_blocks + 1) + BD_BLOCKS + 1


def required_preprocessing(backend: str, n: int, m_blocks: int = 10,
                           eqz: EqzConfig | None = None) -> TapeCounts:
    """Exact tape consumption of one session with ``n`` registered rows."""
    if check_backend(backend) == AES:
        return TapeCounts(zero_shares=159 * n + AES_AND * aes_calls(m_blocks))
    cfg = eqz or EqzConfig()
    bits = cfg.mask_bits
    mults = n * (1 + (bits - 1) + 1) if n else 0
    return TapeCounts(zero_shares=mults, random_bits=bits * n,
                      cube_triples=PROD.mimc_rounds * mimc_calls(m_blocks))


def expected_rounds(backend: str, n: int, eqz: EqzConfig | None = None) -> int:
    """Critical-path length of one session (n >= 1)."""
    r = PROD.mimc_rounds
    if check_backend(backend) == MIMC:
        cfg = eqz or EqzConfig()
        vehicle = cfg.rounds() + 1 + 2 * r + 1
        tag = r + 1 + r + 1
        return max(vehicle, tag)
    depth = aes_circuit().and_depth
    equality = 5 + 1  # 31-AND tree over 32 bits, then selection
    return max(equality + depth + 1, BD_BLOCKS * depth + 1)


# ---------------------------------------------------------------------------
# request parsing (server side)


class RequestError(ValueError):
    pass


def inputs_from_request(req: Message, party: int, seal_key: SealKey,
                        rows: Sequence[RegistrationRow], scheme_blocks: int | None = None
                        ) -> Step2Input:
    """Turn this server's AT_GEN_REQ into session inputs (shares only)."""
    if req.type != AT_GEN_REQ:
        raise RequestError(f"expected AT_GEN_REQ, got {req.type}")
    backend = req["backend"]
    try:
        check_backend(backend)
        bundle = seal_key.open(req["c_s"], key_bundle_aad(req["booking_id"], party))
        keys = decode_shares(backend, bundle, party)
        m = decode_shares(backend, req["m_shares"], party)
    except (SealError, WireFormatError) as exc:
        raise RequestError(f"cannot read request: {exc}") from exc
    if len(keys) != len(key_names(backend)):
        raise RequestError("key bundle has the wrong size")
    if len(m) < BD_BLOCKS + 1 or (scheme_blocks is not None and len(m) != scheme_blocks + 1):
        raise RequestError("share bundle has the wrong number of blocks")
    own = [r.for_backend(backend) for r in rows if r.owner_id == req["owner_id"]]
    return Step2Input(backend, req["booking_id"], keys, m[:-1], m[-1], own)
