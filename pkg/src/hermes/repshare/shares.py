"""Replicated 2-out-of-3 shares.

Party i holds the pair (r_i, r_{i+1 mod 3}) of additive components with
r_0 + r_1 + r_2 = secret.  ``BIT`` marks the GF(2) domain, where components
are packed ints (one bit per lane) and addition is XOR.
"""
from __future__ import annotations

import secrets
from dataclasses import dataclass
from typing import Sequence, Union

from ..field import FieldElement, FieldParams, ParameterMismatch


class _BitDomain:
    label = "gf2"

    def __repr__(self):
        return "BIT"


BIT = _BitDomain()
Domain = Union[FieldParams, _BitDomain]


class ThresholdError(ValueError):
    """Fewer than two distinct parties' shares were supplied."""


class IntegrityError(RuntimeError):
    """Redundant share components disagree."""


_sysrand = secrets.SystemRandom()


@dataclass(frozen=True, slots=True)
class RepShare:
    party: int
    lo: int
    hi: int
    domain: Domain

    def _peer(self, other: "RepShare"):
        if other.domain is not self.domain and other.domain != self.domain:
            raise ParameterMismatch("shares from different domains")
        if other.party != self.party:
            raise ParameterMismatch("shares held by different parties")

    def __add__(self, other):
        if isinstance(other, int):
            return self.add_const(other)
        self._peer(other)
        if self.domain is BIT:
            return RepShare(self.party, self.lo ^ other.lo, self.hi ^ other.hi, BIT)
        p = self.domain.p
        return RepShare(self.party, (self.lo + other.lo) % p, (self.hi + other.hi) % p, self.domain)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, int):
            return self.add_const(-other)
        self._peer(other)
        if self.domain is BIT:
            return self + other
        p = self.domain.p
        return RepShare(self.party, (self.lo - other.lo) % p, (self.hi - other.hi) % p, self.domain)

    def __rsub__(self, other: int):
        return (-self).add_const(other)

    def __neg__(self):
        if self.domain is BIT:
            return self
        p = self.domain.p
        return RepShare(self.party, -self.lo % p, -self.hi % p, self.domain)

    def __mul__(self, c: int):
        """Multiplication by a public constant (AND with a public mask for bits)."""
        if not isinstance(c, int):
            return NotImplemented
        if self.domain is BIT:
            return RepShare(self.party, self.lo & c, self.hi & c, BIT)
        p = self.domain.p
        return RepShare(self.party, self.lo * c % p, self.hi * c % p, self.domain)

    __rmul__ = __mul__

    def add_const(self, c: int) -> "RepShare":
        """Add a public constant; it lives in component r_0 (party 0 lo, party 2 hi)."""
        if self.domain is BIT:
            lo = self.lo ^ c if self.party == 0 else self.lo
            hi = self.hi ^ c if self.party == 2 else self.hi
            return RepShare(self.party, lo, hi, BIT)
        p = self.domain.p
        lo = (self.lo + c) % p if self.party == 0 else self.lo
        hi = (self.hi + c) % p if self.party == 2 else self.hi
        return RepShare(self.party, lo, hi, self.domain)


def const_share(party: int, value: int, domain: Domain) -> RepShare:
    zero = RepShare(party, 0, 0, domain)
    return zero.add_const(value)


def components_to_shares(r: Sequence[int], domain: Domain) -> tuple[RepShare, RepShare, RepShare]:
    return tuple(RepShare(i, r[i], r[(i + 1) % 3], domain) for i in range(3))  # type: ignore


def share(secret, domain: Domain | None = None, rng=None, width: int = 1
          ) -> tuple[RepShare, RepShare, RepShare]:
    """Split ``secret`` into three replicated shares with fresh randomness.

    ``rng`` needs ``randrange``/``getrandbits`` (``random.Random`` in tests,
    the system CSPRNG by default).
    """
    rng = rng or _sysrand
    if isinstance(secret, FieldElement):
        domain = domain or secret.params
        secret = secret.value
    if domain is None:
        raise ValueError("domain required for raw int secrets")
    if domain is BIT:
        r0, r1 = rng.getrandbits(width), rng.getrandbits(width)
        return components_to_shares((r0, r1, secret ^ r0 ^ r1), BIT)
    p = domain.p
    r0, r1 = rng.randrange(p), rng.randrange(p)
    return components_to_shares((r0, r1, (secret - r0 - r1) % p), domain)


def share_many(secrets_: Sequence[int], domain: Domain, rng=None, width: int = 1
               ) -> list[list[RepShare]]:
    """Share a vector; returns per-party lists."""
    out: list[list[RepShare]] = [[], [], []]
    for s in secrets_:
        for i, sh in enumerate(share(s, domain, rng, width)):
            out[i].append(sh)
    return out


def reconstruct(shares: Sequence[RepShare]) -> int:
    """Rebuild a secret from the shares of at least two distinct parties.

    Components held twice are cross-checked.
    """
    by_party = {}
    for s in shares:
        by_party.setdefault(s.party, s)
    if len(by_party) < 2:
        raise ThresholdError("need shares from at least 2 of 3 parties")
    comps: dict[int, int] = {}
    domain = next(iter(by_party.values())).domain
    for i, s in by_party.items():
        for idx, v in ((i, s.lo), ((i + 1) % 3, s.hi)):
            if idx in comps and comps[idx] != v:
                raise IntegrityError(f"component r_{idx} disagrees between parties")
            comps[idx] = v
    if domain is BIT:
        return comps[0] ^ comps[1] ^ comps[2]
    return (comps[0] + comps[1] + comps[2]) % domain.p
