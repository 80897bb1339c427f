"""Backend parameters and byte encodings shared by all roles.

``mimc`` works over the production prime field (17-byte elements); ``aes``
works on 128-bit blocks shared over GF(2) (16 bytes).
"""
from __future__ import annotations

import struct
from typing import Sequence

from ..field import PROD
from ..mimc import TaggedCiphertext
from ..repshare.shares import BIT, Domain, RepShare

MIMC = "mimc"
AES = "aes"
BACKENDS = (MIMC, AES)
BLOCK_MASK = (1 << 128) - 1


class WireFormatError(ValueError):
    pass


def check_backend(backend: str) -> str:
    if backend not in BACKENDS:
        raise WireFormatError(f"unknown backend {backend!r}")
    return backend


def domain_of(backend: str) -> Domain:
    return PROD if check_backend(backend) == MIMC else BIT


def width_of(backend: str) -> int:
    return PROD.byte_len if check_backend(backend) == MIMC else 16


def key_for(backend: str, key: int) -> int:
    """Session keys are field elements; the AES backend uses their low 128 bits."""
    return key if check_backend(backend) == MIMC else key & BLOCK_MASK


def _check_value(backend: str, v: int) -> int:
    limit = PROD.p if backend == MIMC else 1 << 128
    if not 0 <= v < limit:
        raise WireFormatError("element out of range")
    return v


def encode_ct(backend: str, ct: TaggedCiphertext) -> bytes:
    return ct.to_bytes(width_of(backend))


def decode_ct(backend: str, data: bytes) -> TaggedCiphertext:
    try:
        ct = TaggedCiphertext.from_bytes(data, width_of(backend))
    except (ValueError, struct.error) as exc:
        raise WireFormatError(str(exc)) from exc
    _check_value(backend, ct.nonce)
    for b in ct.blocks:
        _check_value(backend, b)
    return ct


def encode_tag(backend: str, tag: int) -> bytes:
    return tag.to_bytes(width_of(backend), "little")


def decode_tag(backend: str, data: bytes) -> int:
    if len(data) != width_of(backend):
        raise WireFormatError("tag has wrong length")
    return _check_value(backend, int.from_bytes(data, "little"))


_SHARE_HEAD = struct.Struct("<BH")


def key_bundle_aad(booking_id: int, party: int) -> bytes:
    """Associated data binding a sealed key bundle to its booking and server."""
    return b"HERMES-CS-v1" + struct.pack(">IB", booking_id, party)


def encode_shares(backend: str, shares: Sequence[RepShare]) -> bytes:
    """u8 party | u16 count | (lo, hi) per share, fixed width little-endian."""
    if not shares:
        raise WireFormatError("empty share bundle")
    party = shares[0].party
    w = width_of(backend)
    out = bytearray(_SHARE_HEAD.pack(party, len(shares)))
    for s in shares:
        if s.party != party:
            raise WireFormatError("bundle mixes parties")
        out += s.lo.to_bytes(w, "little") + s.hi.to_bytes(w, "little")
    return bytes(out)


def decode_shares(backend: str, data: bytes, party: int | None = None) -> list[RepShare]:
    if len(data) < _SHARE_HEAD.size:
        raise WireFormatError("truncated share bundle")
    pid, count = _SHARE_HEAD.unpack_from(data)
    if pid > 2 or (party is not None and pid != party):
        raise WireFormatError(f"bundle addressed to party {pid}")
    w = width_of(backend)
    body = data[_SHARE_HEAD.size:]
    if len(body) != 2 * w * count:
        raise WireFormatError("share bundle length mismatch")
    dom = domain_of(backend)
    vals = [_check_value(backend, int.from_bytes(body[i:i + w], "little"))
            for i in range(0, len(body), w)]
    return [RepShare(pid, vals[2 * k], vals[2 * k + 1], dom) for k in range(count)]


class RegistrationRow:
    """One server's shares of a registered vehicle, usable by either backend.

    The public handle is (owner_id, row_index); the vehicle id and key exist
    only as shares over F_p (``mimc``) and over GF(2) (``aes``).
    """

    __slots__ = ("owner_id", "row_index", "party", "arith", "bits")

    def __init__(self, owner_id: str, row_index: int, party: int,
                 arith: tuple[RepShare, RepShare], bits: tuple[RepShare, RepShare]):
        self.owner_id = owner_id
        self.row_index = row_index
        self.party = party
        self.arith = arith
        self.bits = bits

    def for_backend(self, backend: str) -> tuple[RepShare, RepShare]:
        return self.arith if check_backend(backend) == MIMC else self.bits

    def to_json(self) -> dict:
        return {"owner_id": self.owner_id, "row_index": self.row_index, "party": self.party,
                "arith": encode_shares(MIMC, list(self.arith)).hex(),
                "bits": encode_shares(AES, list(self.bits)).hex()}

    @classmethod
    def from_json(cls, obj: dict) -> "RegistrationRow":
        try:
            party = int(obj["party"])
            arith = decode_shares(MIMC, bytes.fromhex(obj["arith"]), party)
            bits = decode_shares(AES, bytes.fromhex(obj["bits"]), party)
            if len(arith) != 2 or len(bits) != 2:
                raise WireFormatError("registration row needs two shares per domain")
            return cls(str(obj["owner_id"]), int(obj["row_index"]), party,
                       (arith[0], arith[1]), (bits[0], bits[1]))
        except (KeyError, TypeError, ValueError) as exc:
            raise WireFormatError(f"bad registration row: {exc}") from exc
