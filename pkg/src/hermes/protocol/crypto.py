"""Signature, hybrid public-key encryption and certificate hashing.

Signatures default to Ed25519 (64-byte signatures).  An RSA-PSS-2048 mode is
available; its 256-byte signatures make the signed booking 22 blocks long.
Share bundles are sealed with X25519 + HKDF-SHA256 + AES-256-GCM.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ed25519, padding, rsa, x25519
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

ED25519 = "ed25519"
RSA_PSS = "rsa-pss-2048"
SIG_LEN = {ED25519: 64, RSA_PSS: 256}


class SealError(ValueError):
    """Sealed payload failed to decrypt or authenticate."""


# ---------------------------------------------------------------------------
# signatures


class SigningKey:
    def __init__(self, scheme: str, private):
        self.scheme = scheme
        self._private = private

    @classmethod
    def generate(cls, scheme: str = ED25519) -> "SigningKey":
        if scheme == ED25519:
            return cls(scheme, ed25519.Ed25519PrivateKey.generate())
        if scheme == RSA_PSS:
            return cls(scheme, rsa.generate_private_key(public_exponent=65537, key_size=2048))
        raise ValueError(f"unknown signature scheme {scheme!r}")

    @property
    def sig_len(self) -> int:
        return SIG_LEN[self.scheme]

    def public_bytes(self) -> bytes:
        pub = self._private.public_key()
        if self.scheme == ED25519:
            return pub.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        return pub.public_bytes(serialization.Encoding.DER,
                                serialization.PublicFormat.SubjectPublicKeyInfo)

    def sign(self, data: bytes) -> bytes:
        if self.scheme == ED25519:
            return self._private.sign(data)
        return self._private.sign(data, _pss(), hashes.SHA256())

    def private_bytes(self) -> bytes:
        if self.scheme == ED25519:
            return self._private.private_bytes(serialization.Encoding.Raw,
                                               serialization.PrivateFormat.Raw,
                                               serialization.NoEncryption())
        return self._private.private_bytes(serialization.Encoding.DER,
                                           serialization.PrivateFormat.PKCS8,
                                           serialization.NoEncryption())

    @classmethod
    def from_private_bytes(cls, scheme: str, data: bytes) -> "SigningKey":
        if scheme == ED25519:
            return cls(scheme, ed25519.Ed25519PrivateKey.from_private_bytes(data))
        return cls(scheme, serialization.load_der_private_key(data, None))


def _pss():
    return padding.PSS(mgf=padding.MGF1(hashes.SHA256()), salt_length=32)


def verify_signature(scheme: str, public: bytes, data: bytes, sig: bytes) -> bool:
    try:
        if scheme == ED25519:
            ed25519.Ed25519PublicKey.from_public_bytes(public).verify(sig, data)
        elif scheme == RSA_PSS:
            serialization.load_der_public_key(public).verify(sig, data, _pss(), hashes.SHA256())
        else:
            return False
    except (InvalidSignature, ValueError):
        return False
    return True


# ---------------------------------------------------------------------------
# hybrid encryption


class SealKey:
    def __init__(self, private: x25519.X25519PrivateKey):
        self._private = private

    @classmethod
    def generate(cls) -> "SealKey":
        return cls(x25519.X25519PrivateKey.generate())

    @classmethod
    def from_private_bytes(cls, data: bytes) -> "SealKey":
        return cls(x25519.X25519PrivateKey.from_private_bytes(data))

    def private_bytes(self) -> bytes:
        return self._private.private_bytes(serialization.Encoding.Raw,
                                           serialization.PrivateFormat.Raw,
                                           serialization.NoEncryption())

    def public_bytes(self) -> bytes:
        return self._private.public_key().public_bytes(serialization.Encoding.Raw,
                                                       serialization.PublicFormat.Raw)

    def open(self, blob: bytes, aad: bytes = b"") -> bytes:
        if len(blob) < 32 + 12 + 16:
            raise SealError("sealed payload too short")
        eph, nonce, ct = blob[:32], blob[32:44], blob[44:]
        try:
            shared = self._private.exchange(x25519.X25519PublicKey.from_public_bytes(eph))
            key = _derive(shared, eph, self.public_bytes())
            return AESGCM(key).decrypt(nonce, ct, aad)
        except (InvalidTag, ValueError) as exc:
            raise SealError("sealed payload failed authentication") from exc


def _derive(shared: bytes, eph: bytes, recipient: bytes) -> bytes:
    return HKDF(hashes.SHA256(), 32, salt=None, info=b"HERMES-SEAL-v1" + eph + recipient).derive(shared)


def seal(recipient_public: bytes, plaintext: bytes, aad: bytes = b"") -> bytes:
    """ephemeral X25519 public key (32) | GCM nonce (12) | ciphertext + tag."""
    eph = x25519.X25519PrivateKey.generate()
    eph_pub = eph.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    shared = eph.exchange(x25519.X25519PublicKey.from_public_bytes(recipient_public))
    nonce = os.urandom(12)
    ct = AESGCM(_derive(shared, eph_pub, recipient_public)).encrypt(nonce, plaintext, aad)
    return eph_pub + nonce + ct


# ---------------------------------------------------------------------------
# certificates


def cert_hash(data: bytes) -> bytes:
    return hashlib.sha3_512(data).digest()


@dataclass(frozen=True)
class Certificate:
    """Minimal self-contained certificate: subject bound to a verification key."""

    subject: str
    scheme: str
    public_key: bytes

    def to_bytes(self) -> bytes:
        body = {"subject": self.subject, "scheme": self.scheme, "public_key": self.public_key.hex()}
        return json.dumps(body, sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Certificate":
        try:
            body = json.loads(data)
            cert = cls(body["subject"], body["scheme"], bytes.fromhex(body["public_key"]))
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError("malformed certificate") from exc
        # the digest is over the canonical form, so any other encoding is refused
        if cert.to_bytes() != bytes(data):
            raise ValueError("certificate is not canonically encoded")
        return cert

    def digest(self) -> bytes:
        return cert_hash(self.to_bytes())

    @classmethod
    def issue(cls, subject: str, key: SigningKey) -> "Certificate":
        return cls(subject, key.scheme, key.public_bytes())
