"""WebSocket client helpers for the CLI tools."""
from __future__ import annotations

import asyncio
import json
import uuid
from dataclasses import dataclass
from typing import AsyncIterator, Optional, Union

import websockets
from websockets.asyncio.client import connect

from . import wire
from .errors import VoicepipeError


class ConnectError(VoicepipeError):
    pass


@dataclass
class ServerEvent:
    event: str
    data: dict
    seq: int


Incoming = Union[ServerEvent, bytes]


class WsSession:
    """A connected client session after the session.start handshake."""

    def __init__(self, ws, session_id: uuid.UUID, ready: dict):
        self.ws = ws
        self.session_id = session_id
        self.ready = ready
        self._env_seq = 0
        self._audio_seq = 0

    @classmethod
    async def connect(
        cls,
        url: str,
        caps: dict,
        token: Optional[str] = None,
        timeout_s: float = 5.0,
    ) -> "WsSession":
        try:
            ws = await connect(url, open_timeout=timeout_s)
        except (OSError, asyncio.TimeoutError, websockets.exceptions.WebSocketException) as exc:
            raise ConnectError(f"cannot connect to {url}: {exc}")
        data = {"caps": caps}
        if token is not None:
            data["token"] = token
        await ws.send(wire.encode_envelope(wire.EV_SESSION_START, None, 0, data))
        try:
            raw = await asyncio.wait_for(ws.recv(), timeout_s)
        except (asyncio.TimeoutError, websockets.exceptions.ConnectionClosed) as exc:
            raise ConnectError(f"no session.ready: {exc}")
        envelope = wire.parse_envelope(raw)
        if envelope.event != wire.EV_SESSION_READY:
            raise ConnectError(f"handshake rejected: {json.dumps(envelope.data)}")
        return cls(ws, uuid.UUID(envelope.data["session"]), envelope.data)

    async def send_event(self, event: str, data: dict) -> None:
        await self.ws.send(wire.encode_envelope(event, self.session_id, self._env_seq, data))
        self._env_seq += 1

    async def send_audio(self, samples: bytes, capture_micros: int) -> None:
        frame = wire.encode_frame(
            wire.FRAME_KIND_USER_AUDIO,
            self.session_id,
            capture_micros,
            self._audio_seq,
            samples,
        )
        self._audio_seq += 1
        await self.ws.send(frame)

    async def events(self) -> AsyncIterator[Incoming]:
        """Yield parsed text events and raw binary frames until close."""
        while True:
            try:
                message = await self.ws.recv()
            except websockets.exceptions.ConnectionClosed:
                return
            if isinstance(message, (bytes, bytearray)):
                yield bytes(message)
            else:
                envelope = wire.parse_envelope(message)
                yield ServerEvent(envelope.event, envelope.data, envelope.seq)

    async def close(self) -> None:
        await self.ws.close()
