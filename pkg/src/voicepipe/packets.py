"""Packet and window types that flow through every pipeline.

All values are immutable after construction. The only mutable state is
sequence-counter allocation, owned by SequenceCounters; within one source
it is serialized by that source's stage worker.

Timestamps are microseconds since the owning session's start, taken from
a monotonic clock. Wall-clock time never enters latency math.
"""
from __future__ import annotations

import time
import uuid
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Union

from .errors import ParameterError, PayloadError, WindowError

ALLOWED_SAMPLE_RATES = (8000, 16000, 24000, 48000)
PIPELINE_SAMPLE_RATE = 16000
MAX_SOURCE_ID_BYTES = 64

PacketId = uuid.UUID
SessionId = uuid.UUID


class PayloadKind(str, Enum):
    AUDIO = "audio"
    TEXT = "text"
    VISION = "vision"
    CONTROL = "control"


class SourceKind(str, Enum):
    CLIENT = "client"
    STAGE = "stage"


class TextRole(str, Enum):
    USER = "user"
    AGENT = "agent"
    SYSTEM = "system"


class TextFinality(str, Enum):
    PARTIAL = "partial"
    FINAL = "final"
    DELTA = "delta"


class ControlSignal(str, Enum):
    UTTERANCE_START = "utterance_start"
    UTTERANCE_END = "utterance_end"
    INTERRUPT = "interrupt"
    TURN_END = "turn_end"
    FLUSH = "flush"


@dataclass(frozen=True, slots=True)
class Source:
    """Origin of a packet: a client channel or a stage id from the config."""

    kind: SourceKind
    id: str

    def __post_init__(self):
        if not self.id:
            raise PayloadError("source id must be non-empty")
        if len(self.id.encode("ascii", "replace")) > MAX_SOURCE_ID_BYTES:
            raise PayloadError(f"source id exceeds {MAX_SOURCE_ID_BYTES} bytes")
        if not all(0x20 <= ord(c) <= 0x7E for c in self.id):
            raise PayloadError("source id must be printable ASCII")


@dataclass(frozen=True, slots=True)
class AudioPayload:
    """PCM16LE mono audio; duration is derived, never stored."""

    sample_rate_hz: int
    samples: bytes
    channels: int = 1
    sample_format: str = "pcm16le"

    def __post_init__(self):
        if self.sample_rate_hz not in ALLOWED_SAMPLE_RATES:
            raise PayloadError(
                f"sample_rate_hz {self.sample_rate_hz} not in {ALLOWED_SAMPLE_RATES}"
            )
        if self.channels != 1:
            raise PayloadError("only mono audio is supported")
        if self.sample_format != "pcm16le":
            raise PayloadError(f"unknown sample format {self.sample_format!r}")
        frame = 2 * self.channels
        if len(self.samples) % frame != 0:
            raise PayloadError("sample byte length not multiple of frame size")

    @property
    def sample_count(self) -> int:
        return len(self.samples) // (2 * self.channels)


@dataclass(frozen=True, slots=True)
class TextPayload:
    text: str
    role: TextRole
    finality: TextFinality

    def __post_init__(self):
        if not isinstance(self.text, str):
            raise PayloadError("text must be a string")
        # Empty text is legal only for delta flush markers.
        if self.text == "" and self.finality is not TextFinality.DELTA:
            raise PayloadError("empty text allowed only for delta flush markers")


@dataclass(frozen=True, slots=True)
class VisionPayload:
    """Declared packet kind; no v1 stage produces it."""

    data: bytes
    format: str = "reserved"

    def __post_init__(self):
        if self.format != "reserved":
            raise PayloadError("vision format must be 'reserved' in v1")


@dataclass(frozen=True, slots=True)
class ControlPayload:
    """In-band control signal; carries no media.

    at_micros carries the event time for endpointing signals whose
    effective moment differs from the packet's creation time (a VAD
    utterance boundary is backdated to the frame where it happened).
    """

    signal: ControlSignal
    at_micros: Optional[int] = None


Payload = Union[AudioPayload, TextPayload, VisionPayload, ControlPayload]

_PAYLOAD_KINDS = {
    AudioPayload: PayloadKind.AUDIO,
    TextPayload: PayloadKind.TEXT,
    VisionPayload: PayloadKind.VISION,
    ControlPayload: PayloadKind.CONTROL,
}


def payload_kind(payload: Payload) -> PayloadKind:
    try:
        return _PAYLOAD_KINDS[type(payload)]
    except KeyError:
        raise PayloadError(f"unknown payload type {type(payload).__name__}")


@dataclass(frozen=True, slots=True)
class DataPacket:
    """The universal unit of flow: a typed payload with identity and time.

    capture_at preserves a client-supplied capture timestamp; it is kept
    for relative audio timing only and never enters latency math.
    """

    id: PacketId
    source: Source
    created_at: int
    session: SessionId
    turn: int
    seq: int
    payload: Payload
    capture_at: Optional[int] = None

    def __post_init__(self):
        if self.created_at < 0:
            raise PayloadError("created_at must be non-negative")
        if self.turn < 0 or self.seq < 0:
            raise PayloadError("turn and seq must be non-negative")
        payload_kind(self.payload)  # raises on foreign types

    @property
    def kind(self) -> PayloadKind:
        return payload_kind(self.payload)


class SessionClock:
    """Monotonic clock yielding microseconds since the session epoch."""

    def __init__(self, epoch: Optional[float] = None):
        self.epoch = time.monotonic() if epoch is None else epoch

    def now_micros(self) -> int:
        return int((time.monotonic() - self.epoch) * 1_000_000)


class SequenceCounters:
    """Per-(session, source, turn) sequence allocation, starting at 0."""

    def __init__(self):
        self._next: dict[tuple, int] = {}

    def allocate(self, session: SessionId, source: Source, turn: int) -> int:
        key = (session, source.kind, source.id, turn)
        seq = self._next.get(key, 0)
        self._next[key] = seq + 1
        return seq


def new_packet(
    source: Source,
    session: SessionId,
    turn: int,
    payload: Payload,
    clock: SessionClock,
    counters: SequenceCounters,
    capture_at: Optional[int] = None,
) -> DataPacket:
    """Create an immutable packet with a fresh id and the next seq."""
    payload_kind(payload)
    return DataPacket(
        id=uuid.uuid4(),
        source=source,
        created_at=clock.now_micros(),
        session=session,
        turn=turn,
        seq=counters.allocate(session, source, turn),
        payload=payload,
        capture_at=capture_at,
    )


def _order_key(p: DataPacket):
    # Total order: created_at, then (source.id, seq); source kind is the
    # final tiebreak so distinct sources with equal ids stay deterministic.
    return (p.created_at, p.source.id, p.seq, p.source.kind.value)


@dataclass(frozen=True, slots=True)
class DataWindow:
    """An ordered batch of packets sharing one session and turn."""

    session: SessionId
    turn: int
    packets: tuple[DataPacket, ...]

    def __post_init__(self):
        if len(self.packets) < 1:
            raise WindowError("window must contain at least one packet")
        for p in self.packets:
            if p.session != self.session or p.turn != self.turn:
                raise WindowError(
                    f"packet {p.id} (turn {p.turn}) does not match "
                    f"window turn {self.turn}"
                )
        object.__setattr__(
            self, "packets", tuple(sorted(self.packets, key=_order_key))
        )

    @property
    def kinds(self) -> frozenset[PayloadKind]:
        return frozenset(p.kind for p in self.packets)


def window_of(packets: list[DataPacket] | tuple[DataPacket, ...]) -> DataWindow:
    if not packets:
        raise WindowError("window must contain at least one packet")
    first = packets[0]
    return DataWindow(session=first.session, turn=first.turn, packets=tuple(packets))


def window_append(window: DataWindow, packet: DataPacket) -> DataWindow:
    """Return a new window with the packet merged into the total order."""
    if packet.session != window.session or packet.turn != window.turn:
        raise WindowError(
            f"cannot append packet from session {packet.session}/turn "
            f"{packet.turn} to window {window.session}/turn {window.turn}"
        )
    return DataWindow(
        session=window.session,
        turn=window.turn,
        packets=window.packets + (packet,),
    )


def audio_duration_ms(payload: AudioPayload) -> int:
    """Duration in whole milliseconds, rounded down."""
    return payload.sample_count * 1000 // payload.sample_rate_hz


def pcm_chunk(payload: AudioPayload, frame_ms: int) -> list[AudioPayload]:
    """Split audio into frames of frame_ms; the last carries the remainder.

    Concatenating the outputs reproduces the input byte-for-byte.
    """
    if not 10 <= frame_ms <= 100:
        raise ParameterError(f"frame_ms {frame_ms} outside [10, 100]")
    step = payload.sample_rate_hz * frame_ms // 1000 * 2 * payload.channels
    data = payload.samples
    out = []
    for off in range(0, len(data), step):
        out.append(replace(payload, samples=data[off : off + step]))
    if not out:
        out.append(payload)
    return out
