"""The server's client-facing edge: sessions, wire translation, transports.

A Gateway owns a validated plan and builds one private pipeline per
connection. Connections speak either a real WebSocket or an in-memory
loopback transport; both carry the same envelopes and binary frames.
"""
from __future__ import annotations

import asyncio
import logging
import time
import uuid
from collections import deque
from dataclasses import dataclass
from typing import Optional, Union

from .errors import DecodeError, VoicepipeError
from .metrics import LatencyReport
from .packets import (
    AudioPayload,
    DataPacket,
    PayloadKind,
    SessionClock,
    TextFinality,
    TextRole,
)
from .pipeline import Pipeline, ValidatedPlan, build_pipeline
from .stages.registry import StageKindInfo
from . import wire

logger = logging.getLogger(__name__)

HANDSHAKE_TIMEOUT_S = 10.0
OUTBOUND_QUEUE_CAP = 1024
BAD_FRAME_LIMIT = 10
BAD_FRAME_WINDOW_S = 1.0

Message = Union[str, bytes]


class TransportClosed(Exception):
    def __init__(self, code: int = 1000, reason: str = ""):
        super().__init__(f"closed ({code}) {reason}")
        self.code = code
        self.reason = reason


class MemoryTransport:
    """One end of an in-process duplex message channel."""

    def __init__(self, inbox: asyncio.Queue, outbox: asyncio.Queue):
        self._inbox = inbox
        self._outbox = outbox
        self.closed = False
        self.close_code: Optional[int] = None
        self.close_reason: str = ""

    @classmethod
    def pair(cls) -> tuple["MemoryTransport", "MemoryTransport"]:
        a_to_b: asyncio.Queue = asyncio.Queue()
        b_to_a: asyncio.Queue = asyncio.Queue()
        return cls(b_to_a, a_to_b), cls(a_to_b, b_to_a)

    async def recv(self) -> Message:
        if self.closed:
            raise TransportClosed(self.close_code or 1000, self.close_reason)
        item = await self._inbox.get()
        if isinstance(item, TransportClosed):
            self.closed = True
            self.close_code = item.code
            self.close_reason = item.reason
            raise item
        return item

    async def send(self, message: Message) -> None:
        if self.closed:
            raise TransportClosed(self.close_code or 1000, self.close_reason)
        self._outbox.put_nowait(message)

    async def close(self, code: int = 1000, reason: str = "") -> None:
        if self.closed:
            return
        self.closed = True
        self.close_code = code
        self.close_reason = reason
        self._outbox.put_nowait(TransportClosed(code, reason))


class WebSocketTransport:
    """Adapter over a websockets ServerConnection."""

    def __init__(self, connection):
        self._conn = connection

    @staticmethod
    def _closed(exc) -> TransportClosed:
        received = getattr(exc, "rcvd", None)
        if received is not None:
            return TransportClosed(received.code, received.reason)
        return TransportClosed(1006, "connection lost")

    async def recv(self) -> Message:
        import websockets.exceptions

        try:
            return await self._conn.recv()
        except websockets.exceptions.ConnectionClosed as exc:
            raise self._closed(exc) from None

    async def send(self, message: Message) -> None:
        import websockets.exceptions

        try:
            await self._conn.send(message)
        except websockets.exceptions.ConnectionClosed as exc:
            raise self._closed(exc) from None

    async def close(self, code: int = 1000, reason: str = "") -> None:
        await self._conn.close(code, reason)


@dataclass(frozen=True, slots=True)
class ClientCapabilities:
    audio_in: bool = False
    audio_out: bool = False
    text: bool = False

    def __post_init__(self):
        if not (self.audio_in or self.audio_out or self.text):
            raise VoicepipeError("at least one capability must be enabled")

    @classmethod
    def from_dict(cls, data: dict) -> "ClientCapabilities":
        return cls(
            audio_in=bool(data.get("audio_in", False)),
            audio_out=bool(data.get("audio_out", False)),
            text=bool(data.get("text", False)),
        )


class OutboundQueue:
    """Bounded per-connection queue: audio frames drop oldest, text never."""

    def __init__(self, cap: int = OUTBOUND_QUEUE_CAP):
        self.cap = cap
        self._items: deque[tuple[bool, Message]] = deque()
        self._wake = asyncio.Event()
        self.dropped_audio = 0

    def put(self, message: Message, is_audio: bool) -> None:
        if is_audio and len(self._items) >= self.cap:
            for i, (item_is_audio, _) in enumerate(self._items):
                if item_is_audio:
                    del self._items[i]
                    self.dropped_audio += 1
                    break
            else:
                self.dropped_audio += 1  # queue is all text; newest audio loses
                return
        self._items.append((is_audio, message))
        self._wake.set()

    async def get(self) -> Message:
        while not self._items:
            self._wake.clear()
            await self._wake.wait()
        return self._items.popleft()[1]

    def __len__(self) -> int:
        return len(self._items)


class SessionRecord:
    """One live connection: its capabilities, pipeline, and outbound queue."""

    def __init__(self, gateway: "Gateway", transport):
        self.gateway = gateway
        self.transport = transport
        self.id: Optional[uuid.UUID] = None
        self.caps = ClientCapabilities(text=True)
        self.pipeline: Optional[Pipeline] = None
        self.clock = SessionClock()
        self.outbound = OutboundQueue()
        self.env_seq = 0
        self.audio_seq = 0
        self._delta_seq: dict[int, int] = {}
        self._bad_frames: deque[float] = deque()
        self.emits_after_close = 0
        self._closed = False
        self._writer: Optional[asyncio.Task] = None

    # -------------------------------------------------------------- outbound

    def send_event(self, event: str, data: dict) -> None:
        if self._closed:
            self.emits_after_close += 1
            return
        text = wire.encode_envelope(event, self.id, self.env_seq, wire.event_payload(data))
        self.env_seq += 1
        self.outbound.put(text, is_audio=False)

    def send_audio(self, packet: DataPacket) -> None:
        if self._closed:
            self.emits_after_close += 1
            return
        frame = wire.encode_frame(
            wire.FRAME_KIND_AGENT_AUDIO,
            self.id,
            packet.created_at,
            self.audio_seq,
            packet.payload.samples,
        )
        self.audio_seq += 1
        self.outbound.put(frame, is_audio=True)

    def deliver(self, packet: DataPacket) -> None:
        """Pipeline sink output -> wire events."""
        if packet.kind is PayloadKind.AUDIO:
            if self.caps.audio_out:
                self.send_audio(packet)
            return
        if packet.kind is not PayloadKind.TEXT:
            return
        payload = packet.payload
        turn = packet.turn
        if payload.role is TextRole.USER:
            event = (
                wire.EV_TRANSCRIPT_PARTIAL
                if payload.finality is TextFinality.PARTIAL
                else wire.EV_TRANSCRIPT_FINAL
            )
            self.send_event(event, {"turn": turn, "text": payload.text})
            return
        if payload.role is TextRole.AGENT:
            seq = self._delta_seq.get(turn, 0)
            self._delta_seq[turn] = seq + 1
            self.send_event(
                wire.EV_AGENT_TEXT_DELTA, {"turn": turn, "seq": seq, "text": payload.text}
            )

    def notify(self, kind: str, data: dict) -> None:
        if kind == "turn.start":
            self.send_event(wire.EV_AGENT_TURN_START, {"turn": data["turn"]})
        elif kind == "turn.end":
            self.send_event(
                wire.EV_AGENT_TURN_END,
                {"turn": data["turn"], "interrupted": data["interrupted"]},
            )
            report: Optional[LatencyReport] = data.get("report")
            if report is not None:
                self.send_event(wire.EV_METRICS_TURN, _report_event(report))
            self._delta_seq.pop(data["turn"], None)
        elif kind == "llm.done":
            self.send_event(wire.EV_AGENT_TEXT_DONE, {"turn": data["turn"]})
        elif kind == "error":
            self.send_event(wire.EV_ERROR, data)

    # -------------------------------------------------------------- lifecycle

    async def run(self) -> None:
        try:
            if not await self._handshake():
                return
            self._writer = asyncio.get_running_loop().create_task(self._write_loop())
            await self._read_loop()
        finally:
            await self._teardown()

    async def _handshake(self) -> bool:
        try:
            first = await asyncio.wait_for(self.transport.recv(), HANDSHAKE_TIMEOUT_S)
        except (asyncio.TimeoutError, TransportClosed):
            await self.transport.close(wire.CLOSE_HANDSHAKE, "no session.start")
            return False
        if isinstance(first, (bytes, bytearray)):
            await self.transport.close(wire.CLOSE_HANDSHAKE, "binary before session.start")
            return False
        try:
            envelope = wire.parse_envelope(first)
            if envelope.event != wire.EV_SESSION_START:
                raise DecodeError(f"expected session.start, got {envelope.event}", 0)
            self.caps = ClientCapabilities.from_dict(envelope.data.get("caps", {}))
        except (DecodeError, VoicepipeError) as exc:
            await self.transport.close(wire.CLOSE_HANDSHAKE, str(exc)[:100])
            return False
        if self.gateway.auth_token is not None:
            if envelope.data.get("token") != self.gateway.auth_token:
                await self.transport.close(wire.CLOSE_HANDSHAKE, "bad token")
                return False

        self.id = uuid.uuid4()
        try:
            self.pipeline = await build_pipeline(
                self.gateway.plan,
                self.gateway.registry,
                session=self.id,
                clock=self.clock,
                deliver=self.deliver,
                notify=self.notify,
            )
        except VoicepipeError as exc:
            logger.error("pipeline build failed: %s", exc)
            try:
                await self.transport.send(
                    wire.encode_envelope(
                        wire.EV_ERROR, None, 0, {"code": "build_failed", "message": str(exc)}
                    )
                )
            except TransportClosed:
                pass
            await self.transport.close(wire.CLOSE_BUILD_FAILED, "pipeline build failure")
            return False

        self.gateway.sessions[self.id] = self
        self.send_event(
            wire.EV_SESSION_READY,
            {
                "session": str(self.id),
                "pipeline": {
                    "stages": [
                        {"id": d.id, "kind": d.kind} for d in self.gateway.plan.config.stages
                    ],
                    "options": {"tts_handoff": self.gateway.plan.config.options.tts_handoff},
                },
            },
        )
        return True

    async def _read_loop(self) -> None:
        while True:
            try:
                message = await self.transport.recv()
            except TransportClosed:
                return
            if isinstance(message, (bytes, bytearray)):
                if not self._on_binary(bytes(message)):
                    return
            else:
                self._on_text(message)

    def _on_text(self, message: str) -> None:
        try:
            envelope = wire.parse_envelope(message)
        except DecodeError as exc:
            self._bad_frame("bad_frame", f"{exc.reason} (offset {exc.offset})")
            return
        event, data = envelope.event, envelope.data
        if event == wire.EV_TEXT_USER:
            if not self.caps.text:
                self.send_event(
                    wire.EV_ERROR,
                    {"code": "capability", "message": "text capability not declared"},
                )
                return
            text = data.get("text")
            if not isinstance(text, str):
                self._bad_frame("bad_frame", "text.user without text")
                return
            self.pipeline.ingest_text(text)
        elif event == wire.EV_CONTROL_INTERRUPT:
            self.pipeline.interrupt()
        elif event == wire.EV_CONTROL_END_UTTERANCE:
            self.pipeline.ingest_end_utterance()
        else:
            self.send_event(
                wire.EV_ERROR, {"code": "unknown_event", "message": f"unknown event {event!r}"}
            )

    def _on_binary(self, data: bytes) -> bool:
        """Returns False when the connection must close (too many bad frames)."""
        if not self.caps.audio_in:
            return self._bad_frame("capability", "audio_in capability not declared")
        try:
            frame = wire.parse_frame(data)
        except DecodeError as exc:
            return self._bad_frame("bad_frame", f"{exc.reason} (offset {exc.offset})")
        if frame.kind != wire.FRAME_KIND_USER_AUDIO:
            return self._bad_frame("bad_frame", "client frames must be kind 0x01")
        if frame.session != self.id:
            return self._bad_frame("bad_frame", "frame session mismatch")
        try:
            payload = AudioPayload(sample_rate_hz=16000, samples=frame.payload)
        except VoicepipeError as exc:
            return self._bad_frame("bad_frame", str(exc))
        self.pipeline.ingest_audio(payload, capture_at=frame.capture_micros)
        return True

    def _bad_frame(self, code: str, message: str) -> bool:
        self.send_event(wire.EV_ERROR, {"code": code, "message": message})
        now = time.monotonic()
        self._bad_frames.append(now)
        while self._bad_frames and now - self._bad_frames[0] > BAD_FRAME_WINDOW_S:
            self._bad_frames.popleft()
        if len(self._bad_frames) >= BAD_FRAME_LIMIT:
            asyncio.get_running_loop().create_task(
                self.transport.close(wire.CLOSE_BAD_FRAMES, "repeated malformed frames")
            )
            return False
        return True

    async def _write_loop(self) -> None:
        try:
            while True:
                message = await self.outbound.get()
                await self.transport.send(message)
        except (TransportClosed, asyncio.CancelledError):
            return

    async def _teardown(self) -> None:
        self._closed = True
        if self._writer is not None:
            # Give queued events a moment to flush before cancelling.
            for _ in range(100):
                if len(self.outbound) == 0:
                    break
                await asyncio.sleep(0.01)
            self._writer.cancel()
        if self.pipeline is not None:
            await self.pipeline.shutdown()
        if self.id is not None:
            self.gateway.sessions.pop(self.id, None)
        await self.transport.close()


def _report_event(report: LatencyReport) -> dict:
    return {
        "turn": report.turn,
        "eos_to_first_audio_ms": report.eos_to_first_audio_ms,
        "complete": report.complete,
        "interrupted": report.interrupted,
        "stale_packets": report.stale_packets,
        "marks": {kind.value: at for kind, at in report.marks.items()},
    }


class Gateway:
    """Transport-agnostic session manager for one validated plan."""

    def __init__(
        self,
        plan: ValidatedPlan,
        registry: dict[str, StageKindInfo],
        auth_token: Optional[str] = None,
    ):
        self.plan = plan
        self.registry = registry
        self.auth_token = auth_token
        self.sessions: dict[uuid.UUID, SessionRecord] = {}

    async def handle_connection(self, transport) -> None:
        await SessionRecord(self, transport).run()

    def connect_memory(self) -> MemoryTransport:
        """Open a loopback connection; returns the client end."""
        client_end, server_end = MemoryTransport.pair()
        asyncio.get_running_loop().create_task(self.handle_connection(server_end))
        return client_end

    async def close_all(self) -> None:
        for record in list(self.sessions.values()):
            await record.transport.close(1001, "server shutdown")
