"""Client-facing wire protocol: JSON event envelopes and binary audio frames.

Binary frame layout (big-endian integers):
  byte 0      version, 0x01
  byte 1      kind: 0x01 user audio, 0x02 agent audio
  bytes 2-17  session id (16 bytes)
  bytes 18-25 capture timestamp, microseconds since session epoch (uint64)
  bytes 26-29 sequence number (uint32)
  bytes 30-31 reserved, must be 0x0000
  bytes 32-   pcm16le mono 16 kHz samples

The canonical 20 ms frame carries 320 samples: 640 payload bytes, 672 total.
"""
from __future__ import annotations

import json
import struct
import uuid
from dataclasses import dataclass
from typing import Any, Optional

from .errors import DecodeError

WIRE_VERSION = 0x01
FRAME_KIND_USER_AUDIO = 0x01
FRAME_KIND_AGENT_AUDIO = 0x02
FRAME_HEADER = struct.Struct(">BB16sQIH")
FRAME_HEADER_LEN = FRAME_HEADER.size  # 32

CLOSE_HANDSHAKE = 4001
CLOSE_BUILD_FAILED = 4002
CLOSE_BAD_FRAMES = 4003

# client -> server
EV_SESSION_START = "session.start"
EV_TEXT_USER = "text.user"
EV_CONTROL_INTERRUPT = "control.interrupt"
EV_CONTROL_END_UTTERANCE = "control.end_utterance"

# server -> client
EV_SESSION_READY = "session.ready"
EV_TRANSCRIPT_PARTIAL = "transcript.partial"
EV_TRANSCRIPT_FINAL = "transcript.final"
EV_AGENT_TEXT_DELTA = "agent.text.delta"
EV_AGENT_TEXT_DONE = "agent.text.done"
EV_AGENT_TURN_START = "agent.turn.start"
EV_AGENT_TURN_END = "agent.turn.end"
EV_METRICS_TURN = "metrics.turn"
EV_ERROR = "error"


@dataclass(frozen=True, slots=True)
class Envelope:
    event: str
    session: Optional[uuid.UUID]
    seq: int
    data: dict


def encode_envelope(event: str, session: Optional[uuid.UUID], seq: int, data: dict) -> str:
    return json.dumps(
        {
            "event": event,
            "session": str(session) if session is not None else None,
            "seq": seq,
            "data": data,
        },
        separators=(",", ":"),
        ensure_ascii=False,
    )


def parse_envelope(text: str) -> Envelope:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DecodeError(f"malformed text envelope: {exc.msg}", exc.pos)
    if not isinstance(doc, dict):
        raise DecodeError("malformed text envelope: not an object", 0)
    event = doc.get("event")
    if not isinstance(event, str) or not event:
        raise DecodeError("malformed text envelope: missing event", 0)
    seq = doc.get("seq", 0)
    if not isinstance(seq, int) or seq < 0:
        raise DecodeError("malformed text envelope: bad seq", 0)
    data = doc.get("data", {})
    if not isinstance(data, dict):
        raise DecodeError("malformed text envelope: data not an object", 0)
    raw_session = doc.get("session")
    session = None
    if raw_session is not None:
        try:
            session = uuid.UUID(str(raw_session))
        except ValueError:
            raise DecodeError("malformed text envelope: bad session id", 0)
    return Envelope(event=event, session=session, seq=seq, data=data)


@dataclass(frozen=True, slots=True)
class WireFrame:
    kind: int
    session: uuid.UUID
    capture_micros: int
    seq: int
    payload: bytes


def encode_frame(
    kind: int, session: uuid.UUID, capture_micros: int, seq: int, payload: bytes
) -> bytes:
    header = FRAME_HEADER.pack(
        WIRE_VERSION, kind, session.bytes, capture_micros, seq & 0xFFFFFFFF, 0
    )
    return header + payload


def parse_frame(data: bytes) -> WireFrame:
    if len(data) < FRAME_HEADER_LEN:
        raise DecodeError("truncated frame", len(data))
    version, kind, session, capture, seq, reserved = FRAME_HEADER.unpack_from(data, 0)
    if version != WIRE_VERSION:
        raise DecodeError(f"unknown version byte 0x{version:02X}", 0)
    if kind not in (FRAME_KIND_USER_AUDIO, FRAME_KIND_AGENT_AUDIO):
        raise DecodeError(f"unknown kind byte 0x{kind:02X}", 1)
    if reserved != 0:
        raise DecodeError("reserved bytes nonzero", 30)
    payload = data[FRAME_HEADER_LEN:]
    if len(payload) % 2 != 0:
        raise DecodeError("payload byte length not multiple of sample size", FRAME_HEADER_LEN)
    return WireFrame(
        kind=kind,
        session=uuid.UUID(bytes=session),
        capture_micros=capture,
        seq=seq,
        payload=payload,
    )


def event_payload(obj: Any) -> Any:
    """JSON-safe conversion for report-ish values embedded in events."""
    if isinstance(obj, dict):
        return {str(k): event_payload(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [event_payload(v) for v in obj]
    if isinstance(obj, uuid.UUID):
        return str(obj)
    if hasattr(obj, "value") and not isinstance(obj, (int, float, str, bool)):
        return obj.value  # enums
    return obj
