"""Cleartext booking records: booking details, the signed booking M and tokens.

Only owners, consumers, vehicles and auditors construct these types.  Server
code works on shares of their block encodings and never imports this module.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace

from .crypto import SIG_LEN, SigningKey, verify_signature

BLOCK_BYTES = 16
BD_BLOCKS = 6
BD_FIELDS = struct.Struct(">64sIQIIIBI")  # cert_hash, vehicle_id, location, start, end, flags, AC, booking_id

REVOKED = 1 << 31
REVISION_MASK = (1 << 24) - 1

# access rights bitmask
UNLOCK, LOCK, START_ENGINE, OPEN_TRUNK = 1, 2, 4, 8
ACTIONS = {"unlock": UNLOCK, "lock": LOCK, "start": START_ENGINE, "trunk": OPEN_TRUNK}


class BookingFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Conditions:
    start: int
    end: int
    flags: int = 0

    @property
    def revision(self) -> int:
        return self.flags & REVISION_MASK

    @property
    def revoked(self) -> bool:
        return bool(self.flags & REVOKED)

    def allows(self, clock: int) -> bool:
        return self.start <= clock < self.end


@dataclass(frozen=True)
class BookingDetails:
    cert_hash: bytes
    vehicle_id: int
    location: int
    conditions: Conditions
    access_rights: int
    booking_id: int

    def validate(self) -> None:
        if len(self.cert_hash) != 64:
            raise BookingFormatError("cert_hash must be 64 bytes")
        for name, value, bits in (("vehicle_id", self.vehicle_id, 32), ("location", self.location, 64),
                                  ("start", self.conditions.start, 32), ("end", self.conditions.end, 32),
                                  ("flags", self.conditions.flags, 32),
                                  ("access_rights", self.access_rights, 8),
                                  ("booking_id", self.booking_id, 32)):
            if not 0 <= value < (1 << bits):
                raise BookingFormatError(f"{name} out of range")
        if not self.conditions.revoked and self.conditions.start >= self.conditions.end:
            raise BookingFormatError("booking window must have start < end")

    def to_bytes(self) -> bytes:
        self.validate()
        cd = self.conditions
        raw = BD_FIELDS.pack(self.cert_hash, self.vehicle_id, self.location, cd.start, cd.end,
                             cd.flags, self.access_rights, self.booking_id)
        return raw.ljust(BD_BLOCKS * BLOCK_BYTES, b"\0")

    @classmethod
    def from_bytes(cls, data: bytes) -> "BookingDetails":
        if len(data) != BD_BLOCKS * BLOCK_BYTES:
            raise BookingFormatError("booking details must be 96 bytes")
        if any(data[BD_FIELDS.size:]):
            raise BookingFormatError("nonzero padding")
        ch, vid, loc, start, end, flags, ac, bid = BD_FIELDS.unpack_from(data)
        bd = cls(ch, vid, loc, Conditions(start, end, flags), ac, bid)
        bd.validate()
        return bd

    def blocks(self) -> list[int]:
        return bytes_to_blocks(self.to_bytes())

    def revoked_copy(self) -> "BookingDetails":
        rev = (self.conditions.revision + 1) & REVISION_MASK
        return replace(self, conditions=Conditions(0, 0, REVOKED | rev))

    def updated(self, start: int, end: int) -> "BookingDetails":
        rev = (self.conditions.revision + 1) & REVISION_MASK
        return replace(self, conditions=Conditions(start, end, rev))


def bytes_to_blocks(data: bytes) -> list[int]:
    if len(data) % BLOCK_BYTES:
        raise BookingFormatError("length is not a multiple of 16")
    return [int.from_bytes(data[i:i + BLOCK_BYTES], "big") for i in range(0, len(data), BLOCK_BYTES)]


def blocks_to_bytes(blocks) -> bytes:
    out = bytearray()
    for b in blocks:
        if not 0 <= b < (1 << 128):
            raise BookingFormatError("block exceeds 128 bits")
        out += b.to_bytes(BLOCK_BYTES, "big")
    return bytes(out)


@dataclass(frozen=True)
class SignedBooking:
    """M = BD || sigma_o."""

    bd: BookingDetails
    signature: bytes

    @classmethod
    def sign(cls, bd: BookingDetails, key: SigningKey) -> "SignedBooking":
        return cls(bd, key.sign(bd.to_bytes()))

    def to_bytes(self) -> bytes:
        return self.bd.to_bytes() + self.signature

    def blocks(self) -> list[int]:
        return bytes_to_blocks(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes, scheme: str) -> "SignedBooking":
        bd_len = BD_BLOCKS * BLOCK_BYTES
        if len(data) != bd_len + SIG_LEN[scheme]:
            raise BookingFormatError("signed booking has wrong length")
        return cls(BookingDetails.from_bytes(data[:bd_len]), data[bd_len:])

    @classmethod
    def from_blocks(cls, blocks, scheme: str) -> "SignedBooking":
        return cls.from_bytes(blocks_to_bytes(blocks), scheme)

    def verify(self, scheme: str, owner_public: bytes) -> bool:
        return verify_signature(scheme, owner_public, self.bd.to_bytes(), self.signature)


def m_block_count(scheme: str) -> int:
    return BD_BLOCKS + SIG_LEN[scheme] // BLOCK_BYTES
