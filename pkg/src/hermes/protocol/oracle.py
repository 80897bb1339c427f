"""Single-process reference of token generation (a trusted VSSP in one box).

The distributed pipeline must reproduce these outputs exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from ..boolcirc.aes import aes_ctr, cbc_mac
from ..field import PROD
from ..mimc import SESSION_NONCE, SessionKeys, TaggedCiphertext, ctr_decrypt, ctr_encrypt, htmac_tag
from .wire import AES, MIMC, check_backend, key_for

BD_BLOCKS = 6


@dataclass(frozen=True)
class OracleOutput:
    c: TaggedCiphertext
    tag: int
    at: TaggedCiphertext


def encrypt_at(backend: str, k_veh: int, booking_id: int, m_blocks: Sequence[int]) -> TaggedCiphertext:
    if check_backend(backend) == MIMC:
        return ctr_encrypt(k_veh, booking_id, m_blocks, PROD)
    return TaggedCiphertext(booking_id, tuple(aes_ctr(key_for(AES, k_veh), booking_id, m_blocks)))


def decrypt_blocks(backend: str, key: int, ct: TaggedCiphertext) -> list[int]:
    if check_backend(backend) == MIMC:
        return ctr_decrypt(key, ct, PROD)
    return aes_ctr(key_for(AES, key), ct.nonce, ct.blocks)


def expected_tag(backend: str, keys: SessionKeys, bd_blocks: Sequence[int]) -> int:
    if check_backend(backend) == MIMC:
        return htmac_tag(keys.k_tag_enc, keys.k_tag_mac, bd_blocks, PROD)[0]
    return cbc_mac(key_for(AES, keys.k_tag_mac), bd_blocks)


def clear_oracle(backend: str, keys: SessionKeys, m_blocks: Sequence[int], vehicle_id: int,
                 k_veh: int, booking_id: int) -> OracleOutput:
    at = encrypt_at(backend, k_veh, booking_id, m_blocks)
    plain = list(at.blocks) + [vehicle_id]
    if backend == MIMC:
        c = ctr_encrypt(keys.k_enc, SESSION_NONCE, plain, PROD)
    else:
        c = TaggedCiphertext(SESSION_NONCE, tuple(aes_ctr(key_for(AES, keys.k_enc), SESSION_NONCE, plain)))
    return OracleOutput(c, expected_tag(backend, keys, m_blocks[:BD_BLOCKS]), at)


def clear_oracle_lookup(backend: str, keys: SessionKeys, m_blocks: Sequence[int], vehicle_id: int,
                        rows: Sequence[tuple[int, int]], booking_id: int) -> OracleOutput:
    """Same as :func:`clear_oracle` with the key looked up from (id, key) rows.

    Mirrors the oblivious selection: no match gives the zero key.
    """
    k_veh = 0
    for vid, key in rows:
        if vid == vehicle_id:
            k_veh = (k_veh + key) % PROD.p if backend == MIMC else k_veh ^ key
    return clear_oracle(backend, keys, m_blocks, vehicle_id, k_veh, booking_id)
