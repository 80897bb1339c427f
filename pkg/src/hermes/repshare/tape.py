"""Dealer preprocessing: correlated zero shares, shared random bits, cube triples.

Zero shares come from pairwise PRG keys (party i holds k_i and k_{i+1};
alpha_i = F(k_i) - F(k_{i+1})), so the tape stores only the two seeds plus a
budget.  Random bits and cube triples ([r], [r^2], [r^3]) are stored
explicitly as a stream of canonical field elements.

File layout (little-endian)::

    b"HERMTAPE" | u16 version | u8 party | u8 len + field label |
    u64 zero_shares | u64 random_bits | u64 cube_triples |
    16-byte seed k_i | 16-byte seed k_{i+1} |
    random bits as (lo, hi) element pairs | cube triples as 3 (lo, hi) pairs
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from ..field import FieldError, FieldParams, field_by_label
from .shares import BIT, Domain, RepShare, components_to_shares

MAGIC = b"HERMTAPE"
VERSION = 1
_COUNTS = struct.Struct("<QQQ")


class PreprocessingExhausted(RuntimeError):
    def __init__(self, kind: str, needed: int, available: int):
        super().__init__(f"preprocessing exhausted: need {needed} {kind}, {available} left")
        self.kind = kind
        self.needed = needed
        self.available = available


class TapeFormatError(ValueError):
    pass


class Prg:
    """AES-128-CTR keystream; two holders of the same key read the same stream."""

    def __init__(self, key: bytes, domain_sep: int = 0):
        nonce = domain_sep.to_bytes(16, "big")
        self._enc = Cipher(algorithms.AES(key[:16]), modes.CTR(nonce)).encryptor()

    def read(self, n: int) -> bytes:
        return self._enc.update(bytes(n))

    def field_elements(self, count: int, p: int) -> list[int]:
        # 8 extra bytes per element keep the modular bias below 2^-64
        width = (p.bit_length() + 7) // 8 + 8
        buf = self.read(count * width)
        return [int.from_bytes(buf[i:i + width], "little") % p for i in range(0, len(buf), width)]

    def randrange(self, p: int) -> int:
        return self.field_elements(1, p)[0]

    def getrandbits(self, k: int) -> int:
        return int.from_bytes(self.read((k + 7) // 8), "little") & ((1 << k) - 1)


@dataclass
class TapeCounts:
    zero_shares: int = 0
    random_bits: int = 0
    cube_triples: int = 0

    def __add__(self, other: "TapeCounts") -> "TapeCounts":
        return TapeCounts(self.zero_shares + other.zero_shares,
                          self.random_bits + other.random_bits,
                          self.cube_triples + other.cube_triples)

    def as_dict(self) -> dict:
        return {"zero_shares": self.zero_shares, "random_bits": self.random_bits,
                "cube_triples": self.cube_triples}


@dataclass
class PreprocessingTape:
    party: int
    domain: Domain
    counts: TapeCounts
    seed_self: bytes
    seed_next: bytes
    random_bit_shares: list[RepShare] = field(default_factory=list)
    cube_shares: list[tuple[RepShare, RepShare, RepShare]] = field(default_factory=list)
    used: TapeCounts = field(default_factory=TapeCounts)

    def __post_init__(self):
        self._prg_self = Prg(self.seed_self, 0)
        self._prg_next = Prg(self.seed_next, 0)

    # -- zero shares ---------------------------------------------------------
    def _take_zero(self, n: int) -> None:
        left = self.counts.zero_shares - self.used.zero_shares
        if n > left:
            raise PreprocessingExhausted("zero shares", n, left)
        self.used.zero_shares += n

    def zero_field(self, n: int) -> list[int]:
        self._take_zero(n)
        p = self.domain.p
        a = self._prg_self.field_elements(n, p)
        b = self._prg_next.field_elements(n, p)
        return [(x - y) % p for x, y in zip(a, b)]

    def zero_bits(self, nbytes: int, nbits: int) -> int:
        """XOR-zero share covering ``nbytes`` bytes; ``nbits`` are charged."""
        self._take_zero(nbits)
        a = self._prg_self.read(nbytes)
        b = self._prg_next.read(nbytes)
        return int.from_bytes(a, "little") ^ int.from_bytes(b, "little")

    # -- stored correlated randomness ------------------------------------------
    def random_bits(self, n: int) -> list[RepShare]:
        start = self.used.random_bits
        if start + n > len(self.random_bit_shares):
            raise PreprocessingExhausted("random bits", n, len(self.random_bit_shares) - start)
        self.used.random_bits += n
        return self.random_bit_shares[start:start + n]

    def cube_triples(self, n: int) -> list[tuple[RepShare, RepShare, RepShare]]:
        start = self.used.cube_triples
        if start + n > len(self.cube_shares):
            raise PreprocessingExhausted("cube triples", n, len(self.cube_shares) - start)
        self.used.cube_triples += n
        return self.cube_shares[start:start + n]

    def remaining(self) -> TapeCounts:
        return TapeCounts(self.counts.zero_shares - self.used.zero_shares,
                          len(self.random_bit_shares) - self.used.random_bits,
                          len(self.cube_shares) - self.used.cube_triples)

    # -- serialization ---------------------------------------------------------
    def to_bytes(self) -> bytes:
        label = self.domain.label.encode()
        head = MAGIC + struct.pack("<HBB", VERSION, self.party, len(label)) + label
        head += _COUNTS.pack(self.counts.zero_shares, self.counts.random_bits,
                             self.counts.cube_triples)
        head += self.seed_self + self.seed_next
        if self.domain is BIT:
            return head
        enc = self.domain.encode_many
        vals: list[int] = []
        for s in self.random_bit_shares:
            vals += (s.lo, s.hi)
        for trip in self.cube_shares:
            for s in trip:
                vals += (s.lo, s.hi)
        return head + enc(vals)

    @classmethod
    def from_bytes(cls, data: bytes) -> "PreprocessingTape":
        if data[:8] != MAGIC:
            raise TapeFormatError("not a HERMTAPE file")
        try:
            version, party, llen = struct.unpack_from("<HBB", data, 8)
            _COUNTS.unpack_from(data, 12 + llen)
        except struct.error as exc:
            raise TapeFormatError("truncated tape header") from exc
        if version != VERSION:
            raise TapeFormatError(f"unsupported tape version {version}")
        off = 12
        label = data[off:off + llen].decode()
        off += llen
        zs, rb, ct = _COUNTS.unpack_from(data, off)
        off += _COUNTS.size
        seed_self, seed_next = data[off:off + 16], data[off + 16:off + 32]
        off += 32
        domain: Domain = BIT if label == BIT.label else field_by_label(label)
        tape = cls(party, domain, TapeCounts(zs, rb, ct), seed_self, seed_next)
        if domain is BIT:
            return tape
        try:
            vals = domain.decode_many(data[off:])
        except FieldError as exc:
            raise TapeFormatError(f"bad element stream: {exc}") from exc
        if len(vals) != 2 * rb + 6 * ct:
            raise TapeFormatError("element stream length does not match counts")
        it = iter(vals)
        tape.random_bit_shares = [RepShare(party, next(it), next(it), domain) for _ in range(rb)]
        tape.cube_shares = [tuple(RepShare(party, next(it), next(it), domain) for _ in range(3))
                            for _ in range(ct)]
        return tape

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "PreprocessingTape":
        return cls.from_bytes(Path(path).read_bytes())


def _dealer_prg(seed, tag: bytes) -> Prg:
    key = hashlib.sha256(b"HERMES-DEALER-v1" + tag + str(seed).encode()).digest()
    return Prg(key[:16], 0)


def dealer_generate(counts: TapeCounts, seed, domain: Domain) -> list[PreprocessingTape]:
    """Generate one tape per party.  Deterministic in ``seed``."""
    prg = _dealer_prg(seed, domain.label.encode())
    keys = [prg.read(16) for _ in range(3)]
    tapes = [PreprocessingTape(i, domain, TapeCounts(**counts.as_dict()), keys[i], keys[(i + 1) % 3])
             for i in range(3)]
    if domain is BIT:
        return tapes
    p = domain.p

    def shared(value: int):
        r0, r1 = prg.field_elements(2, p)
        return components_to_shares((r0, r1, (value - r0 - r1) % p), domain)

    for _ in range(counts.random_bits):
        b = prg.read(1)[0] & 1
        for i, s in enumerate(shared(b)):
            tapes[i].random_bit_shares.append(s)
    for _ in range(counts.cube_triples):
        r = prg.randrange(p)
        trip = [shared(r), shared(r * r % p), shared(pow(r, 3, p))]
        for i in range(3):
            tapes[i].cube_shares.append((trip[0][i], trip[1][i], trip[2][i]))
    return tapes
