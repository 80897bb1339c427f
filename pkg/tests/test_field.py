import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from hermes.field import (PROD, TEST11, TEST101, TEST19, BitVector, FieldElement, FieldError,
                          ParameterMismatch, fe_add, fe_inv, fe_mul, is_probable_prime,
                          mimc_round_count, select_production_prime)


def fe(v, f=TEST11):
    return FieldElement(v, f)


def test_small_field_arithmetic():
    assert fe_add(fe(7), fe(8)) == 4
    assert fe_mul(fe(3), fe(4)) == 1
    assert fe_inv(fe(3)) == 4
    # exhaustive inverse check
    for a in range(1, 11):
        inv = fe_inv(fe(a))
        assert (a * inv.value) % 11 == 1
        assert [b for b in range(1, 11) if a * b % 11 == 1] == [inv.value]


def test_identities():
    x = fe(123456789, PROD)
    assert x + fe(0, PROD) == x
    assert x + fe(PROD.p - 123456789, PROD) == 0
    assert x * fe(1, PROD) == x


def test_inverse_of_zero():
    with pytest.raises(ZeroDivisionError):
        fe_inv(fe(0))


def test_mismatched_fields():
    with pytest.raises(ParameterMismatch):
        fe(1, TEST11) + fe(1, TEST101)


def test_production_prime():
    f = select_production_prime()
    assert f.p == PROD.p == 2**128 + 385
    assert is_probable_prime(f.p)
    assert f.p % 3 == 2
    assert math.gcd(3, f.p - 1) == 1
    # smallest such prime above 2^128
    assert not any(is_probable_prime(q) and q % 3 == 2 for q in range(2**128 + 1, f.p))
    assert f.mimc_rounds == 81
    assert 3**80 < f.p <= 3**81
    assert mimc_round_count(f.p) == 81
    assert mimc_round_count(3**5) == 5 and mimc_round_count(3**5 + 1) == 6


def test_test_fields_are_permutation_friendly():
    for f in (TEST11, TEST101, TEST19):
        assert is_probable_prime(f.p)
        assert math.gcd(3, f.p - 1) == 1
    for f in (TEST11, TEST101):
        assert sorted(pow(x, 3, f.p) for x in range(f.p)) == list(range(f.p))


def test_wire_widths():
    assert PROD.byte_len == 17
    assert TEST11.byte_len == 2 and TEST101.byte_len == 2
    v = PROD.p - 1
    assert PROD.decode_int(PROD.encode_int(v)) == v
    assert PROD.encode_int(1) == b"\x01" + b"\x00" * 16


def test_decode_rejects_non_canonical():
    with pytest.raises(FieldError):
        TEST11.decode_int((11).to_bytes(2, "little"))
    with pytest.raises(FieldError):
        PROD.decode_int(b"\x00" * 16)


@settings(max_examples=200)
@given(st.integers(0, PROD.p - 1), st.integers(0, PROD.p - 1), st.integers(0, PROD.p - 1))
def test_field_axioms_prod(a, b, c):
    x, y, z = fe(a, PROD), fe(b, PROD), fe(c, PROD)
    assert (x + y) + z == x + (y + z)
    assert x * y == y * x
    assert x * (y + z) == x * y + x * z
    assert FieldElement.from_bytes(x.to_bytes(), PROD) == x


def test_field_axioms_small():
    r = random.Random(5)
    for _ in range(500):
        a, b, c = (fe(r.randrange(101), TEST101) for _ in range(3))
        assert (a * b) * c == a * (b * c)
        assert a + b == b + a
        assert a * (b + c) == a * b + a * c


def test_bitvector():
    a = BitVector.from_bits([1, 0, 1, 1] * 20)
    b = BitVector.from_bits([0, 1, 1, 0] * 20)
    assert len(a ^ b) == 80
    assert (a ^ b).bits() == [x ^ y for x, y in zip(a.bits(), b.bits())]
    assert (a & b).bits() == [x & y for x, y in zip(a.bits(), b.bits())]
    assert (~a).bits() == [1 - x for x in a.bits()]
    assert BitVector.from_bytes(a.to_bytes()) == a
    assert a[0] == 1 and a[1] == 0
    with pytest.raises(ParameterMismatch):
        a ^ BitVector.from_bits([1])
