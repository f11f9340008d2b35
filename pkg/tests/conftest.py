"""Shared test helpers."""
from __future__ import annotations

import asyncio
import uuid

import pytest

from voicepipe.packets import (
    AudioPayload,
    ControlPayload,
    ControlSignal,
    DataPacket,
    SequenceCounters,
    SessionClock,
    Source,
    SourceKind,
    TextFinality,
    TextPayload,
    TextRole,
    new_packet,
)
from voicepipe.pipeline import PipelineConfig, PipelineOptions
from voicepipe.runtime import StageDescriptor
from voicepipe.stages.registry import DEFAULT_ACCEPTS, DEFAULT_EMITS


def run(coro):
    """Run an async test body on a fresh event loop."""
    return asyncio.run(coro)


class FakeClock:
    """Deterministic session clock for timestamp-sensitive tests."""

    def __init__(self, start: int = 0):
        self.now = start

    def now_micros(self) -> int:
        return self.now

    def advance(self, micros: int) -> None:
        self.now += micros


@pytest.fixture
def session_id():
    return uuid.uuid4()


@pytest.fixture
def clock():
    return FakeClock()


@pytest.fixture
def counters():
    return SequenceCounters()


_SHARED_CLOCK = SessionClock()


def make_packet(
    session,
    counters,
    clock=None,
    source=Source(SourceKind.STAGE, "test"),
    turn=0,
    payload=None,
):
    clock = clock if clock is not None else _SHARED_CLOCK
    if payload is None:
        payload = TextPayload(text="x", role=TextRole.USER, finality=TextFinality.FINAL)
    return new_packet(source, session, turn, payload, clock, counters)


def audio_frame_payload(n_samples: int = 320, rate: int = 16000) -> AudioPayload:
    return AudioPayload(sample_rate_hz=rate, samples=bytes(2 * n_samples))


def stage_descriptor(sid: str, kind: str, params=None, aggregate=None, **kwargs):
    return StageDescriptor(
        id=sid,
        kind=kind,
        accepts=DEFAULT_ACCEPTS.get(kind, frozenset()),
        emits=DEFAULT_EMITS.get(kind, frozenset()),
        params=params or {},
        aggregate=aggregate,
        **kwargs,
    )


LLM_TOKENS_20 = [
    "Sure", " thing", " friend", " that", " all", " sounds", " quite", " good.",
    " Let", " us", " keep", " talking", " and", " see", " where", " this",
    " neat", " chat", " goes", " today.",
]


def mock_agent_config(
    tts_handoff: str = "sentence",
    asr_script=("hello agent",),
    llm_script=None,
    timing_overrides=None,
    tts_pace: str = "burst",
    with_vad: bool = True,
    text_source: bool = False,
) -> PipelineConfig:
    timing_overrides = timing_overrides or {}
    llm_script = llm_script if llm_script is not None else [list(LLM_TOKENS_20)]
    asr_params = {"script": list(asr_script)}
    llm_params = {"script": [list(r) for r in llm_script]}
    tts_params = {"pace": tts_pace}
    for key, value in timing_overrides.items():
        for params in (asr_params, llm_params, tts_params):
            params[key] = value
    stages = []
    edges = []
    sources = []
    if with_vad:
        stages.append(stage_descriptor("vad", "vad"))
        edges.append(("vad", "asr"))
        sources.append("vad")
    else:
        sources.append("asr")
    stages += [
        stage_descriptor("asr", "mock_asr", asr_params, aggregate="utterance"),
        stage_descriptor("llm", "scripted_llm", llm_params),
        stage_descriptor("tts", "mock_tts", tts_params),
    ]
    edges += [("asr", "llm"), ("llm", "tts")]
    if text_source:
        sources.append("llm")
    return PipelineConfig(
        stages=stages,
        edges=edges,
        sources=sources,
        sinks=["asr", "llm", "tts"],
        options=PipelineOptions(tts_handoff=tts_handoff),
    )


FAST_TIMINGS = {
    "asr_final_delay_ms": 30,
    "llm_first_token_delay_ms": 0,
    "llm_inter_token_ms": 8,
    "tts_first_audio_delay_ms": 15,
}
