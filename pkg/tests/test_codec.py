"""Serialization: decode∘encode identity and decode error reporting."""
from __future__ import annotations

import json
import uuid

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voicepipe.codec import decode_packet, encode_packet
from voicepipe.errors import DecodeError
from voicepipe.packets import (
    AudioPayload,
    ControlPayload,
    ControlSignal,
    DataPacket,
    Source,
    SourceKind,
    TextFinality,
    TextPayload,
    TextRole,
    VisionPayload,
)

SOURCE_IDS = st.text(
    alphabet=st.characters(min_codepoint=0x21, max_codepoint=0x7E), min_size=1, max_size=16
)

payloads = st.one_of(
    st.builds(
        AudioPayload,
        sample_rate_hz=st.sampled_from([8000, 16000, 24000, 48000]),
        samples=st.binary(max_size=2048).map(lambda b: b if len(b) % 2 == 0 else b + b"\0"),
    ),
    st.builds(
        TextPayload,
        text=st.text(max_size=200).filter(lambda t: t != ""),
        role=st.sampled_from(list(TextRole)),
        finality=st.sampled_from(list(TextFinality)),
    ),
    st.builds(
        ControlPayload,
        signal=st.sampled_from(list(ControlSignal)),
        at_micros=st.one_of(st.none(), st.integers(min_value=0, max_value=2**48)),
    ),
    st.builds(VisionPayload, data=st.binary(max_size=2048)),
)

packets = st.builds(
    DataPacket,
    id=st.uuids(version=4),
    source=st.builds(Source, kind=st.sampled_from(list(SourceKind)), id=SOURCE_IDS),
    created_at=st.integers(min_value=0, max_value=2**50),
    session=st.uuids(version=4),
    turn=st.integers(min_value=0, max_value=2**31 - 1),
    seq=st.integers(min_value=0, max_value=2**31 - 1),
    payload=payloads,
    capture_at=st.one_of(st.none(), st.integers(min_value=0, max_value=2**50)),
)


@given(packets)
@settings(max_examples=300, deadline=None)
def test_roundtrip_identity(packet):
    assert decode_packet(encode_packet(packet)) == packet


def test_roundtrip_audio_fields(session_id):
    packet = DataPacket(
        id=uuid.uuid4(),
        source=Source(SourceKind.STAGE, "tts"),
        created_at=123_456,
        session=session_id,
        turn=3,
        seq=41,
        payload=AudioPayload(sample_rate_hz=16000, samples=bytes(640)),
        capture_at=99,
    )
    decoded = decode_packet(encode_packet(packet))
    assert decoded == packet
    assert decoded.payload.sample_count == 320


def test_decode_empty_is_truncated():
    with pytest.raises(DecodeError, match="truncated"):
        decode_packet(b"")


def test_decode_unknown_version():
    with pytest.raises(DecodeError, match="unknown version"):
        decode_packet(bytes([0x7F]) + bytes(64))


def test_decode_unknown_kind_byte(session_id):
    packet = DataPacket(
        id=uuid.uuid4(),
        source=Source(SourceKind.STAGE, "tts"),
        created_at=0,
        session=session_id,
        turn=0,
        seq=0,
        payload=AudioPayload(sample_rate_hz=16000, samples=b""),
    )
    raw = bytearray(encode_packet(packet))
    raw[1] = 0x09
    with pytest.raises(DecodeError, match="unknown kind"):
        decode_packet(bytes(raw))

    with pytest.raises(DecodeError) as excinfo:
        decode_packet(bytes(raw))
    assert excinfo.value.offset == 1


def test_decode_truncated_audio(session_id):
    packet = DataPacket(
        id=uuid.uuid4(),
        source=Source(SourceKind.STAGE, "tts"),
        created_at=0,
        session=session_id,
        turn=0,
        seq=0,
        payload=AudioPayload(sample_rate_hz=16000, samples=bytes(640)),
    )
    raw = encode_packet(packet)
    for cut in (10, 31, 40, len(raw) - 1):
        with pytest.raises(DecodeError, match="truncated"):
            decode_packet(raw[:cut])


def test_decode_trailing_garbage_rejected(session_id):
    packet = DataPacket(
        id=uuid.uuid4(),
        source=Source(SourceKind.STAGE, "tts"),
        created_at=0,
        session=session_id,
        turn=0,
        seq=0,
        payload=AudioPayload(sample_rate_hz=16000, samples=bytes(4)),
    )
    with pytest.raises(DecodeError, match="trailing"):
        decode_packet(encode_packet(packet) + b"\0\0")


def test_decode_malformed_envelope_carries_offset():
    with pytest.raises(DecodeError) as excinfo:
        decode_packet(b'{"v": 1, "kind": ')
    assert "malformed text envelope" in str(excinfo.value)
    assert excinfo.value.offset > 0


def test_decode_envelope_unknown_version():
    doc = {"v": 9, "kind": "text"}
    with pytest.raises(DecodeError, match="unknown version"):
        decode_packet(json.dumps(doc).encode())


def test_decode_envelope_missing_field():
    doc = {"v": 1, "kind": "text", "payload": {"text": "x", "role": "user"}}
    with pytest.raises(DecodeError, match="missing field"):
        decode_packet(json.dumps(doc).encode())


def test_decode_envelope_unknown_kind():
    doc = {
        "v": 1,
        "kind": "hologram",
        "payload": {},
        "id": uuid.uuid4().hex,
        "session": uuid.uuid4().hex,
        "turn": 0,
        "seq": 0,
        "created_at": 0,
        "source": {"kind": "stage", "id": "x"},
    }
    with pytest.raises(DecodeError, match="unknown kind"):
        decode_packet(json.dumps(doc).encode())
