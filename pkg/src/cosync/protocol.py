"""Coupling protocol messages and their wire framing.

A frame is a 4-byte big-endian payload length followed by a UTF-8 JSON
object whose ``type`` field selects the message kind. All times are integer
microseconds; binary payloads travel base64-encoded.
"""

from __future__ import annotations

import base64
import binascii
import enum
import json
import struct
from dataclasses import dataclass
from typing import BinaryIO, Optional, Union

from .errors import FrameTooShort, MalformedBody, UnknownType
from .kernel import SimTime
from .netsim import InfrastructureChange

PROTOCOL_VERSION = 1
HEADER = struct.Struct(">I")
MAX_FRAME_BYTES = 16 * 1024 * 1024


class SyncKind(str, enum.Enum):
    MAX_ADVANCE = "MAX_ADVANCE"
    WAITING = "WAITING"
    TRANSMISSION_ERROR = "TRANSMISSION_ERROR"


@dataclass(frozen=True)
class InitialMessage:
    until: SimTime
    waiting_period: SimTime
    protocol_version: int = PROTOCOL_VERSION


@dataclass(frozen=True)
class InfoMessage:
    msg_id: str
    sender: str
    receiver: str
    sim_time: SimTime
    max_advance: SimTime
    payload: bytes
    size_bytes: int

    def __post_init__(self):
        if self.max_advance < self.sim_time:
            raise ValueError(f"max_advance {self.max_advance} < sim_time {self.sim_time}")


@dataclass(frozen=True)
class SynchronizationMessage:
    kind: SyncKind
    sim_time: SimTime
    msg_id: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", SyncKind(self.kind))
        if self.kind is SyncKind.TRANSMISSION_ERROR and self.msg_id is None:
            raise ValueError("TRANSMISSION_ERROR needs a msg_id")


@dataclass(frozen=True)
class InfrastructureMessage:
    change: InfrastructureChange


@dataclass(frozen=True)
class DeliveryMessage:
    msg_id: str
    sender: str
    receiver: str
    payload: bytes
    delivered_at: SimTime


ProtocolMessage = Union[
    InitialMessage, InfoMessage, SynchronizationMessage, InfrastructureMessage, DeliveryMessage
]


def type_tag(m: ProtocolMessage) -> str:
    return _TAGS[type(m)]


_TAGS = {
    InitialMessage: "INITIAL",
    InfoMessage: "INFO",
    SynchronizationMessage: "SYNC",
    InfrastructureMessage: "INFRA",
    DeliveryMessage: "DELIVERY",
}


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def to_json(m: ProtocolMessage) -> dict:
    if isinstance(m, InitialMessage):
        body = {"until_us": m.until, "waiting_period_us": m.waiting_period,
                "protocol_version": m.protocol_version}
    elif isinstance(m, InfoMessage):
        body = {"msg_id": m.msg_id, "sender": m.sender, "receiver": m.receiver,
                "sim_time_us": m.sim_time, "max_advance_us": m.max_advance,
                "size_bytes": m.size_bytes, "payload_b64": _b64(m.payload)}
    elif isinstance(m, SynchronizationMessage):
        body = {"kind": m.kind.value, "sim_time_us": m.sim_time}
        if m.msg_id is not None:
            body["msg_id"] = m.msg_id
    elif isinstance(m, InfrastructureMessage):
        body = {"action": m.change.action, "node": m.change.node, "at_us": m.change.at}
    elif isinstance(m, DeliveryMessage):
        body = {"msg_id": m.msg_id, "sender": m.sender, "receiver": m.receiver,
                "delivered_at_us": m.delivered_at, "payload_b64": _b64(m.payload)}
    else:
        raise TypeError(f"not a protocol message: {m!r}")
    return {"type": _TAGS[type(m)], **body}


def _field(doc: dict, name: str, kind: type):
    if name not in doc:
        raise MalformedBody(f"{doc.get('type')} frame is missing {name!r}")
    value = doc[name]
    if kind is int:
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            raise MalformedBody(f"{name!r} must be a non-negative integer")
    elif not isinstance(value, kind):
        raise MalformedBody(f"{name!r} must be {kind.__name__}")
    return value


def _unb64(doc: dict) -> bytes:
    text = _field(doc, "payload_b64", str)
    try:
        return base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError) as exc:
        raise MalformedBody(f"bad payload_b64: {exc}") from exc


def from_json(doc: dict) -> ProtocolMessage:
    if not isinstance(doc, dict):
        raise MalformedBody("frame body must be a JSON object")
    tag = doc.get("type")
    try:
        if tag == "INITIAL":
            return InitialMessage(_field(doc, "until_us", int), _field(doc, "waiting_period_us", int),
                                  _field(doc, "protocol_version", int))
        if tag == "INFO":
            return InfoMessage(
                _field(doc, "msg_id", str), _field(doc, "sender", str), _field(doc, "receiver", str),
                _field(doc, "sim_time_us", int), _field(doc, "max_advance_us", int),
                _unb64(doc), _field(doc, "size_bytes", int),
            )
        if tag == "SYNC":
            msg_id = doc.get("msg_id")
            if msg_id is not None and not isinstance(msg_id, str):
                raise MalformedBody("'msg_id' must be str")
            return SynchronizationMessage(SyncKind(_field(doc, "kind", str)),
                                          _field(doc, "sim_time_us", int), msg_id)
        if tag == "INFRA":
            return InfrastructureMessage(InfrastructureChange(
                _field(doc, "action", str), _field(doc, "node", str), _field(doc, "at_us", int)))
        if tag == "DELIVERY":
            return DeliveryMessage(
                _field(doc, "msg_id", str), _field(doc, "sender", str), _field(doc, "receiver", str),
                _unb64(doc), _field(doc, "delivered_at_us", int),
            )
    except ValueError as exc:
        if isinstance(exc, MalformedBody):
            raise
        raise MalformedBody(str(exc)) from exc
    raise UnknownType(f"unknown frame type {tag!r}")


def encode_frame(m: ProtocolMessage) -> bytes:
    body = json.dumps(to_json(m), sort_keys=True, separators=(",", ":")).encode("utf-8")
    return HEADER.pack(len(body)) + body


def decode_frame(data: bytes) -> ProtocolMessage:
    """Decode exactly one complete frame."""
    if len(data) < HEADER.size:
        raise FrameTooShort(f"need {HEADER.size} header bytes, got {len(data)}")
    (length,) = HEADER.unpack_from(data)
    body = data[HEADER.size:]
    if len(body) < length:
        raise FrameTooShort(f"frame announces {length} bytes, got {len(body)}")
    if len(body) > length:
        raise MalformedBody(f"{len(body) - length} trailing bytes after frame")
    return _decode_body(body)


def _decode_body(body: bytes) -> ProtocolMessage:
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedBody(f"frame body is not UTF-8 JSON: {exc}") from exc
    return from_json(doc)


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream: BinaryIO) -> Optional[ProtocolMessage]:
    """Read one frame from a blocking byte stream; ``None`` on clean EOF."""
    header = _read_exact(stream, HEADER.size)
    if not header:
        return None
    if len(header) < HEADER.size:
        raise FrameTooShort("stream closed inside a frame header")
    (length,) = HEADER.unpack(header)
    if length > MAX_FRAME_BYTES:
        raise MalformedBody(f"frame of {length} bytes exceeds limit")
    body = _read_exact(stream, length)
    if len(body) < length:
        raise FrameTooShort(f"stream closed after {len(body)} of {length} body bytes")
    return _decode_body(body)


def write_frame(stream: BinaryIO, m: ProtocolMessage) -> None:
    stream.write(encode_frame(m))
    stream.flush()


def describe(m: ProtocolMessage) -> str:
    """Compact one-line rendering used in traces."""
    if isinstance(m, InfoMessage):
        return f"INFO {m.msg_id} {m.sender}->{m.receiver} t={m.sim_time} max_advance={m.max_advance}"
    if isinstance(m, SynchronizationMessage):
        extra = f" {m.msg_id}" if m.msg_id else ""
        return f"SYNC {m.kind.value} t={m.sim_time}{extra}"
    if isinstance(m, DeliveryMessage):
        return f"DELIVERY {m.msg_id} {m.sender}->{m.receiver} t={m.delivered_at}"
    if isinstance(m, InfrastructureMessage):
        return f"INFRA {m.change.action} {m.change.node} at={m.change.at}"
    return f"INITIAL until={m.until} waiting_period={m.waiting_period} v={m.protocol_version}"
