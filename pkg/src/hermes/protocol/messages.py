"""Control-plane messages: JSON objects with a type tag, validated on receipt.

Binary payloads are base64; ``session_id`` is hex.  Every message carries a
``booking_id`` or a ``session_id``.
"""
from __future__ import annotations

import base64
import binascii
import json
from dataclasses import dataclass
from typing import Any

SES_K_GEN_REQ = "SES_K_GEN_REQ"
SES_K_GEN_ACK = "SES_K_GEN_ACK"
AT_GEN_REQ = "AT_GEN_REQ"
AT_PUB_REQ = "AT_PUB_REQ"
M_PUB_ACK = "M_PUB_ACK"
AT_PUB_ACK = "AT_PUB_ACK"
ACCESS_REQ = "ACCESS_REQ"
ACCESS_CHALLENGE = "ACCESS_CHALLENGE"
ACCESS_RESPONSE = "ACCESS_RESPONSE"
ACCESS_CONFIRM = "ACCESS_CONFIRM"

# field -> kind; kinds: int, str, hex, b64, b64list
SCHEMAS: dict[str, dict[str, str]] = {
    SES_K_GEN_REQ: {"booking_id": "int"},
    SES_K_GEN_ACK: {"booking_id": "int", "c_s": "b64list"},
    AT_GEN_REQ: {"session_id": "hex", "booking_id": "int", "owner_id": "str", "backend": "str",
                 "c_s": "b64", "m_shares": "b64"},
    AT_PUB_REQ: {"session_id": "hex", "c": "b64", "tag": "b64"},
    M_PUB_ACK: {"session_id": "hex", "ts": "int"},
    AT_PUB_ACK: {"session_id": "hex", "booking_id": "int", "ts": "int"},
    ACCESS_REQ: {"booking_id": "int", "vehicle_id": "int", "at": "b64", "cert": "b64"},
    ACCESS_CHALLENGE: {"booking_id": "int", "nonce": "hex"},
    ACCESS_RESPONSE: {"booking_id": "int", "signature": "b64"},
    ACCESS_CONFIRM: {"booking_id": "int", "ts_access": "int", "signature": "b64"},
}


class MessageError(ValueError):
    pass


@dataclass(frozen=True)
class Message:
    type: str
    fields: dict[str, Any]

    def __getitem__(self, key):
        return self.fields[key]

    def to_json(self) -> dict:
        out: dict[str, Any] = {"type": self.type}
        for name, kind in SCHEMAS[self.type].items():
            v = self.fields[name]
            if kind == "b64":
                v = base64.b64encode(v).decode()
            elif kind == "b64list":
                v = [base64.b64encode(x).decode() for x in v]
            elif kind == "hex":
                v = v.hex()
            out[name] = v
        return out

    def to_bytes(self) -> bytes:
        return json.dumps(self.to_json(), separators=(",", ":")).encode()


def make(type_: str, **fields) -> Message:
    if type_ not in SCHEMAS:
        raise MessageError(f"unknown message type {type_!r}")
    schema = SCHEMAS[type_]
    if set(fields) != set(schema):
        raise MessageError(f"{type_} fields {sorted(fields)} != {sorted(schema)}")
    return Message(type_, dict(fields))


def from_json(obj: Any) -> Message:
    if not isinstance(obj, dict) or obj.get("type") not in SCHEMAS:
        raise MessageError("missing or unknown message type")
    schema = SCHEMAS[obj["type"]]
    extra = set(obj) - set(schema) - {"type"}
    if extra:
        raise MessageError(f"unexpected fields {sorted(extra)}")
    fields: dict[str, Any] = {}
    for name, kind in schema.items():
        if name not in obj:
            raise MessageError(f"missing field {name!r}")
        fields[name] = _decode_field(name, kind, obj[name])
    return Message(obj["type"], fields)


def from_bytes(data: bytes) -> Message:
    try:
        obj = json.loads(data)
    except ValueError as exc:
        raise MessageError("message is not JSON") from exc
    return from_json(obj)


def _decode_field(name: str, kind: str, v: Any):
    try:
        if kind == "int":
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise TypeError
            return v
        if kind == "str":
            if not isinstance(v, str):
                raise TypeError
            return v
        if kind == "hex":
            return bytes.fromhex(v)
        if kind == "b64":
            return base64.b64decode(v, validate=True)
        if kind == "b64list":
            if not isinstance(v, list):
                raise TypeError
            return [base64.b64decode(x, validate=True) for x in v]
    except (TypeError, ValueError, binascii.Error):
        raise MessageError(f"field {name!r} is not a valid {kind}") from None
    raise MessageError(f"unknown field kind {kind}")
