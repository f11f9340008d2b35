"""Full-fidelity packet serialization.

Audio packets use a binary layout whose 32-byte prefix matches the client
wire frame (version, kind, session, timestamp, seq, reserved — see
voicepipe.wire) extended with the fields a round-trip needs (packet id,
turn, source, capture stamp, sample metadata). All other payload kinds use
a JSON envelope. decode(encode(p)) == p for every valid packet.
"""
from __future__ import annotations

import base64
import json
import struct
import uuid
from typing import Optional

from .errors import DecodeError
from .packets import (
    AudioPayload,
    ControlPayload,
    ControlSignal,
    DataPacket,
    PayloadKind,
    Source,
    SourceKind,
    TextFinality,
    TextPayload,
    TextRole,
    VisionPayload,
)

WIRE_VERSION = 0x01
KIND_AUDIO_PACKET = 0x03
_ABSENT_U64 = 0xFFFFFFFFFFFFFFFF

_HEADER = struct.Struct(">BB16sQIH")  # version, kind, session, created_at, seq, reserved
_AUDIO_META = struct.Struct(">16sIBBQIBBI")
# packet id, turn, source kind, source id len, capture_at, rate, channels, format, payload len

_SOURCE_KIND_CODES = {SourceKind.CLIENT: 1, SourceKind.STAGE: 2}
_SOURCE_KIND_NAMES = {v: k for k, v in _SOURCE_KIND_CODES.items()}


def encode_packet(packet: DataPacket) -> bytes:
    if packet.kind is PayloadKind.AUDIO:
        return _encode_audio(packet)
    return _encode_envelope(packet)


def decode_packet(data: bytes) -> DataPacket:
    if len(data) == 0:
        raise DecodeError("truncated buffer", 0)
    lead = data[0]
    if lead == ord("{"):
        return _decode_envelope(data)
    if lead != WIRE_VERSION:
        raise DecodeError(f"unknown version byte 0x{lead:02X}", 0)
    return _decode_audio(data)


def _encode_audio(packet: DataPacket) -> bytes:
    pay: AudioPayload = packet.payload  # type: ignore[assignment]
    src_id = packet.source.id.encode("ascii")
    head = _HEADER.pack(
        WIRE_VERSION,
        KIND_AUDIO_PACKET,
        packet.session.bytes,
        packet.created_at,
        packet.seq,
        0,
    )
    capture = _ABSENT_U64 if packet.capture_at is None else packet.capture_at
    meta = _AUDIO_META.pack(
        packet.id.bytes,
        packet.turn,
        _SOURCE_KIND_CODES[packet.source.kind],
        len(src_id),
        capture,
        pay.sample_rate_hz,
        pay.channels,
        1,  # pcm16le
        len(pay.samples),
    )
    return head + meta + src_id + pay.samples


def _decode_audio(data: bytes) -> DataPacket:
    if len(data) < _HEADER.size:
        raise DecodeError("truncated buffer", len(data))
    version, kind, session, created_at, seq, reserved = _HEADER.unpack_from(data, 0)
    if kind != KIND_AUDIO_PACKET:
        raise DecodeError(f"unknown kind byte 0x{kind:02X}", 1)
    if reserved != 0:
        raise DecodeError("reserved bytes nonzero", 30)
    off = _HEADER.size
    if len(data) < off + _AUDIO_META.size:
        raise DecodeError("truncated buffer", len(data))
    (
        pkt_id,
        turn,
        src_kind,
        src_len,
        capture,
        rate,
        channels,
        fmt,
        pay_len,
    ) = _AUDIO_META.unpack_from(data, off)
    off += _AUDIO_META.size
    if src_kind not in _SOURCE_KIND_NAMES:
        raise DecodeError(f"unknown source kind {src_kind}", 50)
    if fmt != 1:
        raise DecodeError(f"unknown sample format {fmt}", off - 5)
    if len(data) < off + src_len:
        raise DecodeError("truncated buffer", len(data))
    try:
        src_id = data[off : off + src_len].decode("ascii")
    except UnicodeDecodeError:
        raise DecodeError("source id not ASCII", off)
    off += src_len
    if len(data) != off + pay_len:
        raise DecodeError(
            "truncated buffer" if len(data) < off + pay_len else "trailing bytes",
            min(len(data), off + pay_len),
        )
    return DataPacket(
        id=uuid.UUID(bytes=pkt_id),
        source=Source(_SOURCE_KIND_NAMES[src_kind], src_id),
        created_at=created_at,
        session=uuid.UUID(bytes=session),
        turn=turn,
        seq=seq,
        payload=AudioPayload(sample_rate_hz=rate, channels=channels, samples=data[off:]),
        capture_at=None if capture == _ABSENT_U64 else capture,
    )


def _encode_envelope(packet: DataPacket) -> bytes:
    pay = packet.payload
    if isinstance(pay, TextPayload):
        body = {"text": pay.text, "role": pay.role.value, "finality": pay.finality.value}
    elif isinstance(pay, ControlPayload):
        body = {"signal": pay.signal.value, "at_micros": pay.at_micros}
    elif isinstance(pay, VisionPayload):
        body = {"format": pay.format, "b64": base64.b64encode(pay.data).decode("ascii")}
    else:  # pragma: no cover - audio handled in binary path
        raise DecodeError("audio packets use the binary layout", 0)
    doc = {
        "v": WIRE_VERSION,
        "kind": packet.kind.value,
        "id": packet.id.hex,
        "session": packet.session.hex,
        "turn": packet.turn,
        "seq": packet.seq,
        "created_at": packet.created_at,
        "capture_at": packet.capture_at,
        "source": {"kind": packet.source.kind.value, "id": packet.source.id},
        "payload": body,
    }
    return json.dumps(doc, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def _field(doc: dict, name: str, types, where: str = "envelope"):
    if name not in doc:
        raise DecodeError(f"{where} missing field {name!r}", 0)
    value = doc[name]
    if types is not None and not isinstance(value, types):
        raise DecodeError(f"{where} field {name!r} has wrong type", 0)
    return value


def _decode_envelope(data: bytes) -> DataPacket:
    try:
        doc = json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise DecodeError("malformed text envelope: not UTF-8", exc.start)
    except json.JSONDecodeError as exc:
        raise DecodeError(f"malformed text envelope: {exc.msg}", exc.pos)
    if not isinstance(doc, dict):
        raise DecodeError("malformed text envelope: not an object", 0)
    if _field(doc, "v", int) != WIRE_VERSION:
        raise DecodeError(f"unknown version byte 0x{doc['v']:02X}", 0)
    kind = _field(doc, "kind", str)
    body = _field(doc, "payload", dict)
    try:
        if kind == PayloadKind.TEXT.value:
            payload = TextPayload(
                text=_field(body, "text", str, "payload"),
                role=TextRole(_field(body, "role", str, "payload")),
                finality=TextFinality(_field(body, "finality", str, "payload")),
            )
        elif kind == PayloadKind.CONTROL.value:
            at = body.get("at_micros")
            payload = ControlPayload(
                signal=ControlSignal(_field(body, "signal", str, "payload")),
                at_micros=at,
            )
        elif kind == PayloadKind.VISION.value:
            payload = VisionPayload(
                data=base64.b64decode(_field(body, "b64", str, "payload")),
                format=_field(body, "format", str, "payload"),
            )
        else:
            raise DecodeError(f"unknown kind {kind!r}", 0)
    except ValueError as exc:
        raise DecodeError(f"malformed text envelope: {exc}", 0)
    source = _field(doc, "source", dict)
    try:
        return DataPacket(
            id=uuid.UUID(hex=_field(doc, "id", str)),
            source=Source(
                SourceKind(_field(source, "kind", str, "source")),
                _field(source, "id", str, "source"),
            ),
            created_at=_field(doc, "created_at", int),
            session=uuid.UUID(hex=_field(doc, "session", str)),
            turn=_field(doc, "turn", int),
            seq=_field(doc, "seq", int),
            payload=payload,
            capture_at=doc.get("capture_at"),
        )
    except ValueError as exc:
        raise DecodeError(f"malformed text envelope: {exc}", 0)
