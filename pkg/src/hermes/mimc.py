"""MiMC over F_p: cipher, tweaked CTR mode, HtMAC and the consumer KDF.

Each function has a cleartext form (plain ints) and, where the servers need
it, a shared form written as an engine program.  The two forms must agree
value for value; the tests compare them.

MiMC with key k and round constants c_0..c_{r-1} (c_0 = 0)::

    x_{i+1} = (x_i + k + c_i)^3        E_k(x) = x_r + k

CTR mode with nonce eta::

    N = E_k(eta)        ct_j = m_j + E_k(N + j),  j = 1..l

HtMAC: ct = CTR(K_tag_enc, eta=1, m) is opened, hashed in the clear with
SHA3-256 truncated to 128 bits, and the digest is encrypted under K_tag_mac.
"""
from __future__ import annotations

import hashlib
import json
import struct
import threading
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

from .field import PROD, FieldParams
from .repshare.engine import Mul, Open, Party
from .repshare.shares import RepShare

CONSTANT_TAG = b"HERMES-MIMC-v1"
SESSION_NONCE = 1


@lru_cache(maxsize=None)
def round_constants(field: FieldParams) -> tuple[int, ...]:
    cs = [0]
    for i in range(1, field.mimc_rounds):
        digest = hashlib.sha3_256(CONSTANT_TAG + i.to_bytes(4, "big")).digest()
        cs.append(int.from_bytes(digest, "big") % field.p)
    return tuple(cs)


def mimc_encrypt(key: int, x: int, field: FieldParams = PROD,
                 constants: Sequence[int] | None = None) -> int:
    p = field.p
    cs = round_constants(field) if constants is None else constants
    for c in cs:
        x = pow((x + key + c) % p, 3, p)
    return (x + key) % p


def mimc_decrypt(key: int, y: int, field: FieldParams = PROD,
                 constants: Sequence[int] | None = None) -> int:
    p = field.p
    cs = round_constants(field) if constants is None else constants
    inv3 = (2 * p - 1) // 3  # cube root exponent, valid since p = 2 mod 3
    x = (y - key) % p
    for c in reversed(cs):
        x = (pow(x, inv3, p) - key - c) % p
    return x


# ---------------------------------------------------------------------------
# tagged ciphertexts


@dataclass(frozen=True)
class TaggedCiphertext:
    nonce: int
    blocks: tuple[int, ...]

    def to_bytes(self, width: int) -> bytes:
        out = self.nonce.to_bytes(width, "little") + struct.pack("<H", len(self.blocks))
        return out + b"".join(b.to_bytes(width, "little") for b in self.blocks)

    @classmethod
    def from_bytes(cls, data: bytes, width: int) -> "TaggedCiphertext":
        if len(data) < width + 2:
            raise ValueError("truncated ciphertext")
        nonce = int.from_bytes(data[:width], "little")
        (count,) = struct.unpack_from("<H", data, width)
        body = data[width + 2:]
        if len(body) != count * width:
            raise ValueError("ciphertext block count does not match length")
        blocks = tuple(int.from_bytes(body[i:i + width], "little") for i in range(0, len(body), width))
        return cls(nonce, blocks)


def ctr_keystream(key: int, tweak: int, count: int, field: FieldParams = PROD) -> list[int]:
    return [mimc_encrypt(key, (tweak + j) % field.p, field) for j in range(1, count + 1)]


def ctr_encrypt(key: int, nonce: int, blocks: Sequence[int], field: FieldParams = PROD
                ) -> TaggedCiphertext:
    tweak = mimc_encrypt(key, nonce, field)
    ks = ctr_keystream(key, tweak, len(blocks), field)
    p = field.p
    return TaggedCiphertext(nonce, tuple((m + s) % p for m, s in zip(blocks, ks)))


def ctr_decrypt(key: int, ct: TaggedCiphertext, field: FieldParams = PROD) -> list[int]:
    tweak = mimc_encrypt(key, ct.nonce, field)
    ks = ctr_keystream(key, tweak, len(ct.blocks), field)
    p = field.p
    return [(c - s) % p for c, s in zip(ct.blocks, ks)]


def hash_prime(ct: TaggedCiphertext, field: FieldParams = PROD) -> int:
    """First 128 bits of SHA3-256 over eta || blocks in canonical encoding."""
    data = field.encode_int(ct.nonce) + field.encode_many(ct.blocks)
    h = int.from_bytes(hashlib.sha3_256(data).digest()[:16], "big")
    return h % field.p  # no-op for the production field (p > 2^128)


def htmac_tag(k_tag_enc: int, k_tag_mac: int, blocks: Sequence[int], field: FieldParams = PROD
              ) -> tuple[int, TaggedCiphertext]:
    ct = ctr_encrypt(k_tag_enc, SESSION_NONCE, blocks, field)
    return mimc_encrypt(k_tag_mac, hash_prime(ct, field), field), ct


def htmac_verify(k_tag_enc: int, k_tag_mac: int, blocks: Sequence[int], tag: int,
                 field: FieldParams = PROD) -> bool:
    return htmac_tag(k_tag_enc, k_tag_mac, blocks, field)[0] == tag


# ---------------------------------------------------------------------------
# key derivation


class CounterReuse(ValueError):
    pass


@dataclass(frozen=True)
class SessionKeys:
    k_enc: int
    k_tag_enc: int
    k_tag_mac: int
    counter: int

    def tweaks(self, field: FieldParams = PROD) -> tuple[int, int]:
        """One-shot CTR tweaks E_{K_enc}(1) and E_{K_tag_enc}(1)."""
        return (mimc_encrypt(self.k_enc, SESSION_NONCE, field),
                mimc_encrypt(self.k_tag_enc, SESSION_NONCE, field))


class CounterWatermark:
    """Highest KDF counter used so far, optionally persisted to a JSON file."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self.value = 0
        if self.path and self.path.exists():
            self.value = json.loads(self.path.read_text())["counter"]

    def claim(self, counter: int) -> None:
        with self._lock:
            if counter <= self.value:
                raise CounterReuse(f"counter {counter} not above watermark {self.value}")
            self.value = counter
            if self.path:
                self.path.write_text(json.dumps({"counter": counter}))


def kdf(master: int, counter: int, field: FieldParams = PROD,
        watermark: CounterWatermark | None = None) -> SessionKeys:
    if watermark is not None:
        watermark.claim(counter)
    base = 3 * counter
    return SessionKeys(mimc_encrypt(master, base, field), mimc_encrypt(master, base + 1, field),
                       mimc_encrypt(master, base + 2, field), counter)


# ---------------------------------------------------------------------------
# shared variants (engine programs)

CUBE_TAPE = "tape"
CUBE_MUL = "mul"


def _cube(party: Party, xs: list[RepShare], mode: str):
    if mode == CUBE_MUL:
        sq = yield Mul(xs, xs)
        return (yield Mul(sq, xs))
    p = party.field.p
    trips = party.tape.cube_triples(len(xs))
    party.stats.preprocessing_consumed["cube_triples"] += len(xs)
    party.stats.cubes += len(xs)
    cs = yield Open([x - t[0] for x, t in zip(xs, trips)])
    out = []
    for c, (r, r2, r3) in zip(cs, trips):
        # (c + r)^3 = c^3 + 3c^2 r + 3c r^2 + r^3
        out.append((r * (3 * c * c % p) + r2 * (3 * c % p) + r3).add_const(pow(c, 3, p)))
    return out


def mimc_encrypt_shared(party: Party, keys: Sequence[RepShare], xs: Sequence[RepShare | int],
                        mode: str = CUBE_TAPE, constants: Sequence[int] | None = None):
    """Batch of independent MiMC calls; depth r (tape cubes) or 2r (mul cubes)."""
    f = party.field
    cs = round_constants(f) if constants is None else constants
    state = [x if isinstance(x, RepShare) else party.const(x) for x in xs]
    keys = list(keys)
    for c in cs:
        state = yield from _cube(party, [(s + k).add_const(c) for s, k in zip(state, keys)], mode)
    return [s + k for s, k in zip(state, keys)]


def ctr_keystream_shared(party: Party, key: RepShare, tweak: RepShare, count: int,
                         mode: str = CUBE_TAPE):
    return (yield from mimc_encrypt_shared(
        party, [key] * count, [tweak.add_const(j) for j in range(1, count + 1)], mode))


def ctr_encrypt_shared(party: Party, key: RepShare, nonce: int, blocks: Sequence[RepShare],
                       tweak: RepShare | None = None, mode: str = CUBE_TAPE):
    """Shared CTR; pass ``tweak`` when [E_key(nonce)] is already available."""
    if tweak is None:
        (tweak,) = yield from mimc_encrypt_shared(party, [key], [nonce], mode)
    ks = yield from ctr_keystream_shared(party, key, tweak, len(blocks), mode)
    return [m + s for m, s in zip(blocks, ks)]


def htmac_tag_shared(party: Party, k_tag_enc: RepShare, k_tag_mac: RepShare,
                     blocks: Sequence[RepShare], tweak: RepShare | None = None,
                     mode: str = CUBE_TAPE):
    """Returns (opened tag, opened ct blocks)."""
    ct_sh = yield from ctr_encrypt_shared(party, k_tag_enc, SESSION_NONCE, blocks, tweak, mode)
    ct = yield Open(ct_sh)
    h = hash_prime(TaggedCiphertext(SESSION_NONCE, tuple(ct)), party.field)
    (tag_sh,) = yield from mimc_encrypt_shared(party, [k_tag_mac], [h], mode)
    (tag,) = yield Open([tag_sh])
    return tag, ct
