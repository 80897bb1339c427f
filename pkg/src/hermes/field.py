"""Prime-field and GF(2) arithmetic.

Everything MPC-related in this package works on raw Python ints reduced
modulo ``FieldParams.p``; ``FieldElement`` is the checked wrapper used at API
boundaries and on the wire.  Arithmetic is not constant time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence


class FieldError(ValueError):
    pass


class ParameterMismatch(FieldError):
    pass


def is_probable_prime(n: int, rounds: int = 40) -> bool:
    """Deterministic-witness Miller-Rabin (plus a few fixed extra bases)."""
    if n < 2:
        return False
    small = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)
    for q in small:
        if n % q == 0:
            return n == q
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    bases = list(small) + [41, 43, 47, 53, 59, 61, 67, 71][: max(0, rounds - len(small))]
    for a in bases:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def mimc_round_count(p: int) -> int:
    """Smallest r with 3**r >= p, i.e. ceil(log3 p) computed exactly."""
    r, acc = 0, 1
    while acc < p:
        acc *= 3
        r += 1
    return r


@dataclass(frozen=True)
class FieldParams:
    p: int
    mimc_rounds: int
    label: str

    def __post_init__(self):
        if not is_probable_prime(self.p):
            raise FieldError(f"{self.p} is not prime")
        if math.gcd(3, self.p - 1) != 1:
            raise FieldError("x -> x^3 is not a permutation of this field")
        if self.mimc_rounds != mimc_round_count(self.p):
            raise FieldError("mimc_rounds must equal ceil(log3 p)")

    @classmethod
    def make(cls, p: int, label: str) -> "FieldParams":
        return cls(p, mimc_round_count(p), label)

    @property
    def byte_len(self) -> int:
        # small test fields still use a 2-byte wire form
        return max(2, (self.p.bit_length() + 7) // 8)

    def __call__(self, value: int) -> "FieldElement":
        return FieldElement(value, self)

    def rand(self, rng) -> int:
        return rng.randrange(self.p)

    def encode_int(self, value: int) -> bytes:
        return value.to_bytes(self.byte_len, "little")

    def decode_int(self, data: bytes) -> int:
        if len(data) != self.byte_len:
            raise FieldError(f"expected {self.byte_len} bytes, got {len(data)}")
        v = int.from_bytes(data, "little")
        if v >= self.p:
            raise FieldError("non-canonical field encoding")
        return v

    def encode_many(self, values: Iterable[int]) -> bytes:
        n = self.byte_len
        return b"".join(v.to_bytes(n, "little") for v in values)

    def decode_many(self, data: bytes) -> list[int]:
        n = self.byte_len
        if len(data) % n:
            raise FieldError("truncated element stream")
        return [self.decode_int(data[i:i + n]) for i in range(0, len(data), n)]


def select_production_prime() -> FieldParams:
    """Smallest prime p > 2^128 with p = 2 mod 3.

    The search result is pinned as ``PROD_P``; this function recomputes it.
    """
    p = 2**128 + 1
    while not (p % 3 == 2 and is_probable_prime(p)):
        p += 1
    return FieldParams.make(p, "prod")


PROD_P = 2**128 + 385
PROD = FieldParams.make(PROD_P, "prod")
TEST11 = FieldParams.make(11, "test11")
TEST101 = FieldParams.make(101, "test101")
# large enough for exhaustive eqz checks with k=4, s=8 (p > 2^(2k+s+2))
TEST19 = FieldParams.make(2**19 + 21, "test19")

FIELDS = {f.label: f for f in (PROD, TEST11, TEST101, TEST19)}


def field_by_label(label: str) -> FieldParams:
    try:
        return FIELDS[label]
    except KeyError:
        raise FieldError(f"unknown field label {label!r}") from None


class FieldElement:
    """Canonical residue of F_p.  Immutable."""

    __slots__ = ("value", "params")

    def __init__(self, value: int, params: FieldParams):
        object.__setattr__(self, "value", value % params.p)
        object.__setattr__(self, "params", params)

    def __setattr__(self, name, value):
        raise AttributeError("FieldElement is immutable")

    def _check(self, other) -> int:
        if isinstance(other, FieldElement):
            if other.params != self.params:
                raise ParameterMismatch(f"{self.params.label} vs {other.params.label}")
            return other.value
        if isinstance(other, int):
            return other
        return NotImplemented

    def __add__(self, other):
        v = self._check(other)
        return NotImplemented if v is NotImplemented else FieldElement(self.value + v, self.params)

    __radd__ = __add__

    def __sub__(self, other):
        v = self._check(other)
        return NotImplemented if v is NotImplemented else FieldElement(self.value - v, self.params)

    def __rsub__(self, other):
        v = self._check(other)
        return NotImplemented if v is NotImplemented else FieldElement(v - self.value, self.params)

    def __mul__(self, other):
        v = self._check(other)
        return NotImplemented if v is NotImplemented else FieldElement(self.value * v, self.params)

    __rmul__ = __mul__

    def __neg__(self):
        return FieldElement(-self.value, self.params)

    def __pow__(self, e: int):
        return FieldElement(pow(self.value, e, self.params.p), self.params)

    def inverse(self) -> "FieldElement":
        if self.value == 0:
            raise ZeroDivisionError("inverse of zero")
        return FieldElement(pow(self.value, self.params.p - 2, self.params.p), self.params)

    def __truediv__(self, other):
        v = self._check(other)
        if v is NotImplemented:
            return NotImplemented
        return self * FieldElement(v, self.params).inverse()

    def __eq__(self, other):
        if isinstance(other, FieldElement):
            return self.params == other.params and self.value == other.value
        if isinstance(other, int):
            return self.value == other % self.params.p
        return NotImplemented

    def __hash__(self):
        return hash((self.value, self.params.p))

    def __int__(self):
        return self.value

    def __repr__(self):
        return f"FieldElement({self.value}, {self.params.label})"

    def to_bytes(self) -> bytes:
        return self.params.encode_int(self.value)

    @classmethod
    def from_bytes(cls, data: bytes, params: FieldParams) -> "FieldElement":
        return cls(params.decode_int(data), params)


def fe_add(a: FieldElement, b: FieldElement) -> FieldElement:
    return a + b


def fe_mul(a: FieldElement, b: FieldElement) -> FieldElement:
    return a * b


def fe_inv(a: FieldElement) -> FieldElement:
    return a.inverse()


class BitVector:
    """Fixed-length GF(2) vector packed into 64-bit words (bit 0 = index 0)."""

    __slots__ = ("length", "words")

    def __init__(self, length: int, words: Sequence[int] | None = None):
        nwords = (length + 63) // 64
        if words is None:
            words = [0] * nwords
        if len(words) != nwords:
            raise FieldError("word count does not match length")
        words = list(words)
        if length % 64 and nwords:
            words[-1] &= (1 << (length % 64)) - 1
        self.length = length
        self.words = tuple(words)

    @classmethod
    def from_bits(cls, bits: Iterable[int]) -> "BitVector":
        bits = list(bits)
        return cls.from_int(sum((b & 1) << i for i, b in enumerate(bits)), len(bits))

    @classmethod
    def from_int(cls, value: int, length: int) -> "BitVector":
        mask = (1 << 64) - 1
        return cls(length, [(value >> (64 * i)) & mask for i in range((length + 63) // 64)])

    def to_int(self) -> int:
        return sum(w << (64 * i) for i, w in enumerate(self.words))

    def bits(self) -> list[int]:
        v = self.to_int()
        return [(v >> i) & 1 for i in range(self.length)]

    def __len__(self):
        return self.length

    def __getitem__(self, i: int) -> int:
        if not 0 <= i < self.length:
            raise IndexError(i)
        return (self.words[i // 64] >> (i % 64)) & 1

    def _same(self, other: "BitVector"):
        if other.length != self.length:
            raise ParameterMismatch("bit vector lengths differ")

    def __xor__(self, other: "BitVector") -> "BitVector":
        self._same(other)
        return BitVector(self.length, [a ^ b for a, b in zip(self.words, other.words)])

    def __and__(self, other: "BitVector") -> "BitVector":
        self._same(other)
        return BitVector(self.length, [a & b for a, b in zip(self.words, other.words)])

    def __invert__(self) -> "BitVector":
        return BitVector(self.length, [~w & ((1 << 64) - 1) for w in self.words])

    def __eq__(self, other):
        return isinstance(other, BitVector) and (self.length, self.words) == (other.length, other.words)

    def __hash__(self):
        return hash((self.length, self.words))

    def __repr__(self):
        return f"BitVector({''.join(map(str, self.bits()))})"

    def to_bytes(self) -> bytes:
        out = self.length.to_bytes(4, "little")
        return out + b"".join(w.to_bytes(8, "little") for w in self.words)

    @classmethod
    def from_bytes(cls, data: bytes) -> "BitVector":
        if len(data) < 4:
            raise FieldError("truncated bit vector")
        length = int.from_bytes(data[:4], "little")
        nwords = (length + 63) // 64
        if len(data) != 4 + 8 * nwords:
            raise FieldError("bit vector length prefix does not match payload")
        words = [int.from_bytes(data[4 + 8 * i: 12 + 8 * i], "little") for i in range(nwords)]
        bv = cls(length, words)
        if bv.words != tuple(words):
            raise FieldError("non-zero bits beyond length")
        return bv
