"""HTTP adapters wrapping external ASR/LLM/TTS microservices.

Contracts:
  asr  — POST a RIFF/PCM16LE/mono/16 kHz utterance, expect {"text": str}.
  llm  — POST {"messages": [...]}, consume a line stream of {"delta": str}
         records terminated by {"done": true}.
  tts  — POST {"text": str}, expect raw pcm16le bytes with an
         X-Sample-Rate response header (resampled to 16 kHz on receipt).

A failed call degrades the turn (agent text "…", turn_end, session error
event) instead of disconnecting; the adapter stays up for the next turn.
"""
from __future__ import annotations

import json
import logging
import os

import httpx

from ..audio import resample_linear, wav_bytes
from ..errors import ConfigError
from ..packets import (
    AudioPayload,
    ControlSignal,
    DataWindow,
    PayloadKind,
    TextFinality,
    TextRole,
    pcm_chunk,
)
from ..runtime import Stage

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT_MS = 10_000


class _HttpAdapterStage(Stage):
    """Shared plumbing: client pool, auth env handling, turn failure."""

    def __init__(self):
        self.base_url = ""
        self.timeout_ms = DEFAULT_TIMEOUT_MS
        self._client: httpx.AsyncClient | None = None

    async def on_start(self, params: dict) -> None:
        self.base_url = params.get("base_url", "")
        if not self.base_url:
            raise ConfigError(f"{self.ctx.descriptor.kind} requires base_url")
        self.timeout_ms = int(params.get("timeout_ms", DEFAULT_TIMEOUT_MS))
        headers = {}
        env_name = params.get("auth_token_env")
        if env_name:
            token = os.environ.get(env_name)
            if token is None:
                raise ConfigError(f"auth token environment variable {env_name!r} is not set")
            headers["Authorization"] = f"Bearer {token}"
        self._client = httpx.AsyncClient(
            headers=headers, timeout=self.timeout_ms / 1000.0
        )

    async def on_stop(self) -> None:
        if self._client is not None:
            await self._client.aclose()

    def _fail_turn(self, turn: int, emit, exc: Exception) -> None:
        logger.warning("%s turn %d failed: %s", self.ctx.descriptor.id, turn, exc)
        self.ctx.report_error("adapter_error", f"{self.ctx.descriptor.id}: {exc}")
        if self.ctx.is_stale(turn):
            return
        emit(self.ctx.text(turn, "…", TextRole.AGENT, TextFinality.FINAL))
        emit(self.ctx.control(turn, ControlSignal.TURN_END))


class HttpAsrStage(_HttpAdapterStage):
    """Posts one utterance as WAV, emits the transcription as final text."""

    async def on_window(self, window: DataWindow, emit) -> None:
        samples = b"".join(
            p.payload.samples for p in window.packets if p.kind is PayloadKind.AUDIO
        )
        if not samples:
            return
        turn = window.turn
        try:
            resp = await self._client.post(
                self.base_url,
                content=wav_bytes(samples),
                headers={"Content-Type": "audio/wav"},
            )
            resp.raise_for_status()
            text = resp.json()["text"]
            if not isinstance(text, str):
                raise ValueError("asr response 'text' is not a string")
        except Exception as exc:  # noqa: BLE001 - any transport/shape fault
            self._fail_turn(turn, emit, exc)
            return
        if not self.ctx.is_stale(turn):
            emit(self.ctx.text(turn, text, TextRole.USER, TextFinality.FINAL))


class HttpLlmStage(_HttpAdapterStage):
    """Streams completion deltas for each final user text; keeps history."""

    def __init__(self):
        super().__init__()
        self.history: list[dict] = []

    async def on_window(self, window: DataWindow, emit) -> None:
        for packet in window.packets:
            if packet.kind is not PayloadKind.TEXT:
                continue
            payload = packet.payload
            if payload.role is not TextRole.USER or payload.finality is not TextFinality.FINAL:
                continue
            await self._complete(window.turn, payload.text, emit)

    async def _complete(self, turn: int, prompt: str, emit) -> None:
        self.history.append({"role": "user", "content": prompt})
        reply_parts: list[str] = []
        try:
            async with self._client.stream(
                "POST", self.base_url, json={"messages": list(self.history)}
            ) as resp:
                resp.raise_for_status()
                async for line in resp.aiter_lines():
                    if not line.strip():
                        continue
                    record = json.loads(line)
                    if record.get("done"):
                        break
                    delta = record["delta"]
                    reply_parts.append(delta)
                    if self.ctx.is_stale(turn):
                        return
                    emit(self.ctx.text(turn, delta, TextRole.AGENT, TextFinality.DELTA))
        except Exception as exc:  # noqa: BLE001
            self._fail_turn(turn, emit, exc)
            return
        self.history.append({"role": "assistant", "content": "".join(reply_parts)})
        if not self.ctx.is_stale(turn):
            emit(self.ctx.control(turn, ControlSignal.FLUSH))


class HttpTtsStage(_HttpAdapterStage):
    """Synthesizes each text chunk; normalizes returned audio to 16 kHz."""

    async def on_window(self, window: DataWindow, emit) -> None:
        turn = window.turn
        for packet in window.packets:
            if packet.kind is PayloadKind.CONTROL:
                if packet.payload.signal is ControlSignal.FLUSH:
                    if not self.ctx.is_stale(turn):
                        emit(self.ctx.control(turn, ControlSignal.TURN_END))
                continue
            if packet.kind is not PayloadKind.TEXT:
                continue
            payload = packet.payload
            if payload.finality is not TextFinality.FINAL or not payload.text:
                continue
            await self._speak(turn, payload.text, emit)

    async def _speak(self, turn: int, text: str, emit) -> None:
        try:
            resp = await self._client.post(self.base_url, json={"text": text})
            resp.raise_for_status()
            rate = int(resp.headers.get("X-Sample-Rate", "16000"))
            pcm = resample_linear(resp.content, rate, 16000)
            if len(pcm) % 2:
                raise ValueError("tts returned an odd number of payload bytes")
        except Exception as exc:  # noqa: BLE001
            self._fail_turn(turn, emit, exc)
            return
        if not pcm:
            return
        for frame in pcm_chunk(AudioPayload(sample_rate_hz=16000, samples=pcm), 20):
            if self.ctx.is_stale(turn):
                return
            emit(self.ctx.audio(turn, frame))
