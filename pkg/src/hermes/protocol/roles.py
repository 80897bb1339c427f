"""Owner, consumer, vehicle manufacturer, vehicle (OBU) and auditor logic.

These run on user devices and therefore handle cleartext booking data,
session keys and vehicle keys.  Server code must not import this module.
"""
from __future__ import annotations

import os
import secrets
import struct
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

from ..field import PROD
from ..mimc import SESSION_NONCE, CounterWatermark, SessionKeys, TaggedCiphertext, kdf
from ..repshare.shares import BIT, ThresholdError, reconstruct, share
from . import messages as msg
from .booking import (BD_BLOCKS, BookingDetails, BookingFormatError, SignedBooking, blocks_to_bytes,
                      m_block_count)
from .crypto import ED25519, Certificate, SigningKey, seal, verify_signature
from .oracle import decrypt_blocks, expected_tag
from .wire import (AES, MIMC, RegistrationRow, WireFormatError, check_backend, decode_ct,
                   decode_shares, domain_of, encode_ct, encode_shares, encode_tag, key_bundle_aad,
                   key_for)


# ---------------------------------------------------------------------------
# Step A: vehicle manufacturer registers vehicles with the servers


class DuplicateRegistration(ValueError):
    pass


@dataclass(frozen=True)
class VehicleRecord:
    owner_id: str
    vehicle_id: int
    k_veh: int


class VmDatabase:
    """The manufacturer's cleartext table of vehicles and their keys."""

    def __init__(self):
        self.rows: dict[tuple[str, int], VehicleRecord] = {}
        self.registered: dict[tuple[str, int], int] = {}

    def add_vehicle(self, owner_id: str, vehicle_id: int, k_veh: int | None = None) -> VehicleRecord:
        if not 0 <= vehicle_id < 2 ** 32:
            raise ValueError("vehicle id must fit in 32 bits")
        if (owner_id, vehicle_id) in self.rows:
            raise DuplicateRegistration(f"vehicle {vehicle_id} already known for {owner_id}")
        rec = VehicleRecord(owner_id, vehicle_id, secrets.randbits(128) if k_veh is None else k_veh)
        self.rows[(owner_id, vehicle_id)] = rec
        return rec

    def owner_rows(self, owner_id: str) -> list[VehicleRecord]:
        return [r for (o, _), r in self.rows.items() if o == owner_id]


def step_a_register(vm: VmDatabase, owner_id: str, vehicle_id: int, rng=None) -> list[RegistrationRow]:
    """Share (vehicle_id, K_veh) for the three servers; one row per party."""
    rec = vm.rows.get((owner_id, vehicle_id))
    if rec is None:
        raise KeyError(f"vehicle {vehicle_id} of {owner_id} is not in the VM database")
    if (owner_id, vehicle_id) in vm.registered:
        raise DuplicateRegistration(f"vehicle {vehicle_id} of {owner_id} already registered")
    index = sum(1 for o, _ in vm.registered if o == owner_id)
    vid_a, key_a = share(rec.vehicle_id, PROD, rng), share(rec.k_veh, PROD, rng)
    vid_b, key_b = share(rec.vehicle_id, BIT, rng, 32), share(rec.k_veh, BIT, rng, 128)
    vm.registered[(owner_id, vehicle_id)] = index
    return [RegistrationRow(owner_id, index, i, (vid_a[i], key_a[i]), (vid_b[i], key_b[i]))
            for i in range(3)]


# ---------------------------------------------------------------------------
# Step 1


def session_key_values(backend: str, keys: SessionKeys) -> list[int]:
    if check_backend(backend) == MIMC:
        tweak_enc, tweak_tag = keys.tweaks(PROD)
        return [keys.k_enc, keys.k_tag_enc, keys.k_tag_mac, tweak_enc, tweak_tag]
    return [key_for(AES, keys.k_enc), key_for(AES, keys.k_tag_mac)]


def step1_consumer(master_key: int, counter: int, booking_id: int, server_pubkeys: Sequence[bytes],
                   backend: str = MIMC, watermark: CounterWatermark | None = None, rng=None
                   ) -> tuple[msg.Message, SessionKeys]:
    """Derive session keys and seal each server's share bundle to that server."""
    if len(server_pubkeys) != 3:
        raise ValueError("need three server public keys")
    keys = kdf(master_key, counter, PROD, watermark)
    values = session_key_values(backend, keys)
    dom = domain_of(backend)
    per_party: list[list] = [[], [], []]
    for v in values:
        for i, s in enumerate(share(v, dom, rng, 128)):
            per_party[i].append(s)
    sealed = [seal(server_pubkeys[i], encode_shares(backend, per_party[i]), key_bundle_aad(booking_id, i))
              for i in range(3)]
    return msg.make(msg.SES_K_GEN_ACK, booking_id=booking_id, c_s=sealed), keys


def step1_owner(bd: BookingDetails, owner_key: SigningKey, ack: msg.Message, owner_id: str,
                backend: str = MIMC, session_id: bytes | None = None, rng=None) -> list[msg.Message]:
    """Sign BD, share M and the vehicle id block, one AT_GEN_REQ per server."""
    bd.validate()
    if ack.type != msg.SES_K_GEN_ACK or ack["booking_id"] != bd.booking_id:
        raise ValueError("acknowledgement does not belong to this booking")
    signed = SignedBooking.sign(bd, owner_key)
    blocks = signed.blocks() + [bd.vehicle_id]
    dom = domain_of(backend)
    per_party: list[list] = [[], [], []]
    for v in blocks:
        for i, s in enumerate(share(v, dom, rng, 128)):
            per_party[i].append(s)
    sid = session_id or os.urandom(16)
    return [msg.make(msg.AT_GEN_REQ, session_id=sid, booking_id=bd.booking_id, owner_id=owner_id,
                     backend=backend, c_s=ack["c_s"][i], m_shares=encode_shares(backend, per_party[i]))
            for i in range(3)]


# ---------------------------------------------------------------------------
# Step 3


class TagMismatch(RuntimeError):
    pass


class EntryNotFound(LookupError):
    pass


def step3_consumer(ledger, keys: SessionKeys, bd: BookingDetails, backend: str = MIMC,
                   ts: int | None = None, timeout: float = 0.0, poll: float = 0.05,
                   m_blocks: int | None = None) -> tuple[TaggedCiphertext, int]:
    """Find the ledger entry for this booking, check its tag, recover (AT, vehicle id).

    With ``ts`` the consumer checks that particular entry (tag mismatch is an
    abort); otherwise it searches the ledger by the expected tag.
    """
    tag_bytes = encode_tag(backend, expected_tag(backend, keys, bd.blocks()))
    deadline = time.monotonic() + timeout
    while True:
        if ts is not None:
            entry = next((e for e in ledger.query_since(ts - 1) if e.ts == ts), None)
            if entry is not None and entry.tag != tag_bytes:
                raise TagMismatch("published tag does not match the booking")
        else:
            entry = ledger.query_by_tag(tag_bytes)
        if entry is not None:
            break
        if time.monotonic() >= deadline:
            raise EntryNotFound("no ledger entry for this booking")
        time.sleep(poll)
    c = decode_ct(backend, entry.c)
    if c.nonce != SESSION_NONCE or len(c.blocks) < 2:
        raise WireFormatError("unexpected ciphertext layout")
    if m_blocks is not None and len(c.blocks) != m_blocks + 1:
        raise WireFormatError("ciphertext block count does not match the booking")
    plain = decrypt_blocks(backend, keys.k_enc, c)
    at = TaggedCiphertext(bd.booking_id, tuple(plain[:-1]))
    return at, plain[-1]


# ---------------------------------------------------------------------------
# Step 4: the vehicle


EXPIRED = "expired"
NOT_YET_VALID = "not_yet_valid"
BAD_SIGNATURE = "bad_signature"
MALFORMED = "malformed_token"
WRONG_VEHICLE = "wrong_vehicle"
CERT_MISMATCH = "cert_mismatch"
BAD_RESPONSE = "bad_challenge_response"
NOT_PERMITTED = "action_not_permitted"
SUPERSEDED = "superseded"
REVOKED = "revoked"


@dataclass(frozen=True)
class AccessConfirmation:
    booking_id: int
    ts_access: int
    signature: bytes

    @staticmethod
    def signed_bytes(bd: BookingDetails, ts_access: int) -> bytes:
        return bd.to_bytes() + struct.pack(">Q", ts_access)

    def verify(self, bd: BookingDetails, scheme: str, vehicle_public: bytes) -> bool:
        return verify_signature(scheme, vehicle_public, self.signed_bytes(bd, self.ts_access),
                                self.signature)

    def to_message(self) -> msg.Message:
        return msg.make(msg.ACCESS_CONFIRM, booking_id=self.booking_id, ts_access=self.ts_access,
                        signature=self.signature)


@dataclass(frozen=True)
class AccessDecision:
    granted: bool
    reason: str = ""
    confirmation: AccessConfirmation | None = None
    booking: BookingDetails | None = None


@dataclass
class Obu:
    """On-board unit state; the clock is injected."""

    vehicle_id: int
    k_veh: int
    owner_public: bytes
    signing_key: SigningKey
    clock: Callable[[], int]
    backend: str = MIMC
    owner_scheme: str = ED25519
    revisions: dict[int, int] = field(default_factory=dict)

    def challenge(self) -> bytes:
        return os.urandom(16)

    def _open_token(self, at: TaggedCiphertext | bytes, booking_check: bool = True):
        if isinstance(at, bytes):
            at = decode_ct(self.backend, at)
        if len(at.blocks) != m_block_count(self.owner_scheme):
            raise BookingFormatError("token has wrong block count")
        plain = decrypt_blocks(self.backend, self.k_veh, at)
        signed = SignedBooking.from_bytes(blocks_to_bytes(plain), self.owner_scheme)
        return at, signed

    def _check_token(self, at) -> tuple[str, SignedBooking | None]:
        try:
            at, signed = self._open_token(at)
        except (BookingFormatError, WireFormatError, ValueError):
            return MALFORMED, None
        if not signed.verify(self.owner_scheme, self.owner_public):
            return BAD_SIGNATURE, None
        bd = signed.bd
        if bd.vehicle_id != self.vehicle_id:
            return WRONG_VEHICLE, signed
        if bd.booking_id != at.nonce:
            return MALFORMED, signed
        seen = self.revisions.get(bd.booking_id)
        if seen is not None and bd.conditions.revision < seen:
            return SUPERSEDED, signed
        if bd.conditions.revoked:
            self.revisions[bd.booking_id] = max(seen or 0, bd.conditions.revision)
            return REVOKED, signed
        return "", signed

    def install_update(self, at: TaggedCiphertext | bytes) -> AccessDecision:
        """Owner-delivered update or revocation: record its revision, grant nothing."""
        reason, signed = self._check_token(at)
        if signed is None or reason not in ("", REVOKED):
            return AccessDecision(False, reason or MALFORMED)
        bid = signed.bd.booking_id
        self.revisions[bid] = max(self.revisions.get(bid, 0), signed.bd.conditions.revision)
        return AccessDecision(False, reason or "installed", booking=signed.bd)

    def step4(self, at: TaggedCiphertext | bytes, vehicle_id: int, cert_bytes: bytes,
              nonce: bytes, response: bytes, action: int) -> AccessDecision:
        if vehicle_id != self.vehicle_id:
            return AccessDecision(False, WRONG_VEHICLE)
        reason, signed = self._check_token(at)
        if reason:
            return AccessDecision(False, reason)
        bd = signed.bd
        try:
            cert = Certificate.from_bytes(cert_bytes)
        except ValueError:
            return AccessDecision(False, CERT_MISMATCH)
        if cert.digest() != bd.cert_hash:
            return AccessDecision(False, CERT_MISMATCH)
        if not verify_signature(cert.scheme, cert.public_key, challenge_bytes(bd.booking_id, nonce), response):
            return AccessDecision(False, BAD_RESPONSE)
        now = self.clock()
        if now < bd.conditions.start:
            return AccessDecision(False, NOT_YET_VALID)
        if now >= bd.conditions.end:
            return AccessDecision(False, EXPIRED)
        if action & ~bd.access_rights or not action:
            return AccessDecision(False, NOT_PERMITTED)
        bid = bd.booking_id
        self.revisions[bid] = max(self.revisions.get(bid, 0), bd.conditions.revision)
        sig = self.signing_key.sign(AccessConfirmation.signed_bytes(bd, now))
        return AccessDecision(True, "granted", AccessConfirmation(bid, now, sig), bd)


def challenge_bytes(booking_id: int, nonce: bytes) -> bytes:
    return b"HERMES-ACCESS-v1" + struct.pack(">I", booking_id) + nonce


def answer_challenge(consumer_key: SigningKey, booking_id: int, nonce: bytes) -> bytes:
    return consumer_key.sign(challenge_bytes(booking_id, nonce))


def request_access(obu: Obu, consumer_key: SigningKey, cert: Certificate, at: TaggedCiphertext | bytes,
                   vehicle_id: int, action: int) -> AccessDecision:
    """Short-range exchange: request, challenge, signed response, decision."""
    nonce = obu.challenge()
    at_bytes = at if isinstance(at, bytes) else encode_ct(obu.backend, at)
    try:
        booking_id = decode_ct(obu.backend, at_bytes).nonce
    except WireFormatError:
        booking_id = 0  # the vehicle rejects the token itself
    response = answer_challenge(consumer_key, booking_id & 0xFFFFFFFF, nonce)
    return obu.step4(at_bytes, vehicle_id, cert.to_bytes(), nonce, response, action)


# ---------------------------------------------------------------------------
# accountability


class AuditError(ValueError):
    pass


def audit_reconstruct(records: Sequence[dict], session_id: str, owner_public: bytes,
                      scheme: str = ED25519) -> SignedBooking:
    """Rebuild the signed booking of one session from two or more server records."""
    chosen = [r for r in records if r.get("session_id") == session_id]
    if len(chosen) != len(records):
        raise AuditError("records belong to different sessions")
    parties = {r["party"] for r in chosen}
    if len(parties) < 2:
        raise AuditError("need audit records from at least two servers")
    backend = check_backend(chosen[0]["backend"])
    bundles = [decode_shares(backend, bytes.fromhex(r["m_shares"]), r["party"]) for r in chosen]
    count = len(bundles[0])
    if any(len(b) != count for b in bundles):
        raise AuditError("records disagree on the number of blocks")
    try:
        blocks = [reconstruct([b[j] for b in bundles]) for j in range(count)]
    except ThresholdError as exc:
        raise AuditError(str(exc)) from exc
    try:
        signed = SignedBooking.from_blocks(blocks[:-1], scheme)
    except (BookingFormatError, ValueError) as exc:
        raise AuditError(f"reconstructed booking is malformed: {exc}") from exc
    if not signed.verify(scheme, owner_public):
        raise AuditError("owner signature does not verify")
    return signed
