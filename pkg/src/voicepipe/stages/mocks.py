"""Deterministic mock stages for tests and latency experiments.

Each mock reproduces the timing structure of a real microservice through
configurable delays while keeping payload bytes exactly reproducible.
"""
from __future__ import annotations

import asyncio
from dataclasses import dataclass

from ..audio import sine_pcm
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

TTS_SAMPLE_RATE = 16000
TTS_MS_PER_CHAR = 40
TTS_FRAME_MS = 20


async def _sleep_until(deadline: float) -> None:
    """Absolute-deadline sleep; keeps multi-step schedules from drifting."""
    delay = deadline - asyncio.get_running_loop().time()
    if delay > 0:
        await asyncio.sleep(delay)


@dataclass(frozen=True, slots=True)
class MockTimings:
    """Experimental knobs standing in for real ASR/LLM/TTS latencies."""

    asr_final_delay_ms: int = 300
    llm_first_token_delay_ms: int = 0
    llm_inter_token_ms: int = 80
    tts_first_audio_delay_ms: int = 150

    def __post_init__(self):
        for name in (
            "asr_final_delay_ms",
            "llm_first_token_delay_ms",
            "llm_inter_token_ms",
            "tts_first_audio_delay_ms",
        ):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")


def timings_from_params(params: dict) -> MockTimings:
    defaults = MockTimings()
    return MockTimings(
        asr_final_delay_ms=int(params.get("asr_final_delay_ms", defaults.asr_final_delay_ms)),
        llm_first_token_delay_ms=int(
            params.get("llm_first_token_delay_ms", defaults.llm_first_token_delay_ms)
        ),
        llm_inter_token_ms=int(params.get("llm_inter_token_ms", defaults.llm_inter_token_ms)),
        tts_first_audio_delay_ms=int(
            params.get("tts_first_audio_delay_ms", defaults.tts_first_audio_delay_ms)
        ),
    )


class MockAsrStage(Stage):
    """Emits scripted transcripts for utterance windows, cycling the script.

    A synthetic partial with the first half of the text lands at half the
    final delay to exercise partial plumbing.
    """

    def __init__(self):
        self.script: list[str] = []
        self.timings = MockTimings()
        self._index = 0

    async def on_start(self, params: dict) -> None:
        self.script = list(params.get("script", []))
        if not self.script:
            raise ConfigError("mock_asr requires a non-empty script")
        if not all(isinstance(t, str) for t in self.script):
            raise ConfigError("mock_asr script entries must be strings")
        self.timings = timings_from_params(params)

    async def on_window(self, window: DataWindow, emit) -> None:
        if not any(p.kind is PayloadKind.AUDIO for p in window.packets):
            return
        text = self.script[self._index % len(self.script)]
        self._index += 1
        turn = window.turn
        t0 = asyncio.get_running_loop().time()
        await _sleep_until(t0 + self.timings.asr_final_delay_ms / 2000.0)
        if self.ctx.is_stale(turn):
            return
        emit(self.ctx.text(turn, text[: len(text) // 2], TextRole.USER, TextFinality.PARTIAL))
        await _sleep_until(t0 + self.timings.asr_final_delay_ms / 1000.0)
        if self.ctx.is_stale(turn):
            return
        emit(self.ctx.text(turn, text, TextRole.USER, TextFinality.FINAL))


class ScriptedLlmStage(Stage):
    """Streams scripted token lists as text deltas, then a flush control.

    Token k lands at first_token_delay + (k-1) * inter_token; the flush
    control follows the last delta after one more inter-token interval.
    """

    def __init__(self):
        self.script: list[list[str]] = []
        self.timings = MockTimings()
        self._index = 0

    async def on_start(self, params: dict) -> None:
        script = params.get("script", [])
        if not script or not all(isinstance(r, list) and r for r in script):
            raise ConfigError("scripted_llm requires a non-empty script of token lists")
        self.script = [list(map(str, reply)) for reply in script]
        self.timings = timings_from_params(params)

    async def on_window(self, window: DataWindow, emit) -> None:
        for packet in window.packets:
            if packet.kind is not PayloadKind.TEXT:
                continue
            payload = packet.payload
            if payload.role is not TextRole.USER or payload.finality is not TextFinality.FINAL:
                continue
            await self._reply(window.turn, emit)

    async def _reply(self, turn: int, emit) -> None:
        tokens = self.script[self._index % len(self.script)]
        self._index += 1
        t0 = asyncio.get_running_loop().time()
        first = self.timings.llm_first_token_delay_ms / 1000.0
        inter = self.timings.llm_inter_token_ms / 1000.0
        await _sleep_until(t0 + first)
        for i, token in enumerate(tokens):
            if self.ctx.is_stale(turn):
                return
            emit(self.ctx.text(turn, token, TextRole.AGENT, TextFinality.DELTA))
            await _sleep_until(t0 + first + (i + 1) * inter)
        if self.ctx.is_stale(turn):
            return
        emit(self.ctx.control(turn, ControlSignal.FLUSH))


class MockTtsStage(Stage):
    """Synthesizes a fixed 440 Hz tone, 40 ms of audio per character.

    Identical text yields bit-identical samples. Emits 20 ms frames after
    the configured first-audio delay; `pace: realtime` spaces frames at
    their real duration, the default bursts them.
    """

    def __init__(self):
        self.timings = MockTimings()
        self.pace_realtime = False

    async def on_start(self, params: dict) -> None:
        self.timings = timings_from_params(params)
        pace = params.get("pace", "burst")
        if pace not in ("burst", "realtime"):
            raise ConfigError(f"mock_tts pace must be burst or realtime, got {pace!r}")
        self.pace_realtime = pace == "realtime"

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
        n_samples = TTS_SAMPLE_RATE * TTS_MS_PER_CHAR // 1000 * len(text)
        tone = AudioPayload(
            sample_rate_hz=TTS_SAMPLE_RATE, samples=sine_pcm(n_samples)
        )
        frames = pcm_chunk(tone, TTS_FRAME_MS)
        t0 = asyncio.get_running_loop().time()
        delay = self.timings.tts_first_audio_delay_ms / 1000.0
        await _sleep_until(t0 + delay)
        for i, frame in enumerate(frames):
            if self.ctx.is_stale(turn):
                return
            emit(self.ctx.audio(turn, frame))
            if self.pace_realtime:
                await _sleep_until(t0 + delay + (i + 1) * TTS_FRAME_MS / 1000.0)


class EchoStage(Stage):
    """Re-emits every packet's payload under this stage's source."""

    async def on_window(self, window: DataWindow, emit) -> None:
        for packet in window.packets:
            if packet.kind is PayloadKind.CONTROL:
                continue
            emit(self.ctx.packet(window.turn, packet.payload))
