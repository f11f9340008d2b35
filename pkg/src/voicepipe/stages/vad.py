"""Energy-based voice activity detection and utterance endpointing.

A frame is speech when its RMS level in dBFS exceeds the threshold. An
utterance starts once start_frames consecutive speech frames are seen
(backdated to the first frame of that run) and ends once hangover_ms of
silence accumulates after speech (stamped at the first silent frame).
Deterministic by construction: no model, no randomness.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Optional

from ..audio import rms_dbfs
from ..errors import ConfigError, ParameterError
from ..packets import (
    AudioPayload,
    ControlSignal,
    DataPacket,
    DataWindow,
    PayloadKind,
    audio_duration_ms,
)
from ..runtime import Stage


@dataclass(frozen=True, slots=True)
class VadParams:
    frame_ms: int = 20
    threshold_dbfs: float = -35.0
    start_frames: int = 3
    hangover_ms: int = 600

    def __post_init__(self):
        if not 10 <= self.frame_ms <= 100:
            raise ConfigError(f"frame_ms {self.frame_ms} outside [10, 100]")
        if not -90.0 <= self.threshold_dbfs <= 0.0:
            raise ConfigError(f"threshold_dbfs {self.threshold_dbfs} outside [-90, 0]")
        if self.start_frames < 1:
            raise ConfigError("start_frames must be >= 1")
        if self.hangover_ms < self.frame_ms:
            raise ConfigError("hangover_ms must be >= frame_ms")


class VadMode(Enum):
    SILENCE = "silence"
    MAYBE_SPEECH = "maybe_speech"
    SPEECH = "speech"


@dataclass(frozen=True, slots=True)
class VadState:
    mode: VadMode = VadMode.SILENCE
    consecutive_speech: int = 0
    silence_ms: int = 0
    utterance_started_at: Optional[int] = None
    pending_end_at: Optional[int] = None  # first silent frame after speech


@dataclass(frozen=True, slots=True)
class VadEvent:
    signal: ControlSignal
    at: int  # microseconds since session epoch


def vad_step(
    state: VadState, frame: AudioPayload, params: VadParams, at: int
) -> tuple[VadState, list[VadEvent]]:
    """Advance the endpointing state machine by one frame starting at `at`."""
    if audio_duration_ms(frame) != params.frame_ms:
        raise ParameterError(
            f"frame duration {audio_duration_ms(frame)} ms != frame_ms {params.frame_ms}"
        )
    is_speech = rms_dbfs(frame.samples) > params.threshold_dbfs
    events: list[VadEvent] = []

    if state.mode is VadMode.SILENCE:
        if is_speech:
            if params.start_frames == 1:
                state = VadState(VadMode.SPEECH, 0, 0, at, None)
                events.append(VadEvent(ControlSignal.UTTERANCE_START, at))
            else:
                state = VadState(VadMode.MAYBE_SPEECH, 1, 0, at, None)
        return state, events

    if state.mode is VadMode.MAYBE_SPEECH:
        if not is_speech:
            return VadState(), events
        run = state.consecutive_speech + 1
        if run >= params.start_frames:
            started = state.utterance_started_at
            state = VadState(VadMode.SPEECH, 0, 0, started, None)
            events.append(VadEvent(ControlSignal.UTTERANCE_START, started))
        else:
            state = replace(state, consecutive_speech=run)
        return state, events

    # SPEECH mode
    if is_speech:
        return replace(state, silence_ms=0, pending_end_at=None), events
    silence_ms = state.silence_ms + params.frame_ms
    end_at = state.pending_end_at if state.pending_end_at is not None else at
    if silence_ms >= params.hangover_ms:
        events.append(VadEvent(ControlSignal.UTTERANCE_END, end_at))
        return VadState(), events
    return replace(state, silence_ms=silence_ms, pending_end_at=end_at), events


class VadStage(Stage):
    """Endpoint a continuous audio stream and gate it to speech only.

    Emits utterance_start / utterance_end control packets and forwards the
    audio frames belonging to the utterance (candidate-run frames are
    buffered and released once the start is confirmed; hangover-period
    frames are released only if speech resumes).
    """

    def __init__(self):
        self.params = VadParams()
        self.state = VadState()
        self._frame_bytes = 0
        self._pcm = b""  # rolling reframe buffer
        self._pcm_at: Optional[int] = None
        self._candidate: list[tuple[AudioPayload, int]] = []
        self._hangover: list[tuple[AudioPayload, int]] = []

    async def on_start(self, params: dict) -> None:
        self.params = VadParams(
            frame_ms=int(params.get("frame_ms", 20)),
            threshold_dbfs=float(params.get("threshold_dbfs", -35.0)),
            start_frames=int(params.get("start_frames", 3)),
            hangover_ms=int(params.get("hangover_ms", 600)),
        )
        self._frame_bytes = 16000 * self.params.frame_ms // 1000 * 2

    async def on_window(self, window: DataWindow, emit) -> None:
        turn = window.turn
        for packet in window.packets:
            if packet.kind is not PayloadKind.AUDIO:
                continue
            if self._pcm_at is None:
                self._pcm_at = packet.created_at
            self._pcm += packet.payload.samples
            while len(self._pcm) >= self._frame_bytes:
                frame_bytes, self._pcm = (
                    self._pcm[: self._frame_bytes],
                    self._pcm[self._frame_bytes :],
                )
                at = self._pcm_at
                self._pcm_at = packet.created_at if self._pcm else None
                frame = AudioPayload(sample_rate_hz=16000, samples=frame_bytes)
                self._step(frame, at, turn, emit)

    def _step(self, frame: AudioPayload, at: int, turn: int, emit) -> None:
        before = self.state.mode
        self.state, events = vad_step(self.state, frame, self.params, at)
        after = self.state.mode

        if after is VadMode.MAYBE_SPEECH:
            self._candidate.append((frame, at))
        elif before is VadMode.MAYBE_SPEECH and after is VadMode.SILENCE:
            self._candidate.clear()  # false start

        for event in events:
            if event.signal is ControlSignal.UTTERANCE_START:
                emit(self.ctx.control(turn, ControlSignal.UTTERANCE_START, event.at))
                for payload, _ in self._candidate:
                    emit(self.ctx.audio(turn, payload))
                self._candidate.clear()
                emit(self.ctx.audio(turn, frame))
            elif event.signal is ControlSignal.UTTERANCE_END:
                self._hangover.clear()  # trailing silence is not utterance audio
                emit(self.ctx.control(turn, ControlSignal.UTTERANCE_END, event.at))

        if not events and before is VadMode.SPEECH and after is VadMode.SPEECH:
            if self.state.silence_ms == 0 and self.state.pending_end_at is None:
                # Speech frame: release any held hangover audio first.
                for payload, _ in self._hangover:
                    emit(self.ctx.audio(turn, payload))
                self._hangover.clear()
                emit(self.ctx.audio(turn, frame))
            else:
                self._hangover.append((frame, at))

    async def on_flush(self, emit) -> None:
        self._pcm = b""
        self._pcm_at = None
        self._candidate.clear()
        self._hangover.clear()
        self.state = VadState()
