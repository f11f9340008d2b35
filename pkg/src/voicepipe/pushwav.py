"""Push a WAV file through one full agent turn over a live server.

Streams the file as 20 ms frames in real time (as a microphone would),
appends trailing silence so the endpointing fires, collects the agent's
audio reply, and writes a latency report.
"""
from __future__ import annotations

import asyncio
import logging
import sys
import uuid
import wave
from pathlib import Path
from typing import Optional

from .audio import downmix_to_mono, read_wav, resample_linear, write_wav
from .client import ConnectError, ServerEvent, WsSession
from .errors import ParameterError
from .metrics import LatencyReport, MarkKind
from .packets import ALLOWED_SAMPLE_RATES
from .report import render_latency_figure, write_report
from . import wire

logger = logging.getLogger(__name__)

FRAME_MS = 20
FRAME_SAMPLES = 16000 * FRAME_MS // 1000
FRAME_BYTES = FRAME_SAMPLES * 2
TRAILING_SILENCE_MS = 800

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONNECT = 4
EXIT_TURN_FAILED = 6
EXIT_ENDPOINT_TIMEOUT = 7


def load_input_wav(path: str) -> bytes:
    """Read, downmix, and resample the input to 16 kHz mono pcm16le."""
    try:
        rate, channels, frames = read_wav(path)
    except (wave.Error, EOFError, OSError, ParameterError) as exc:
        raise ParameterError(f"malformed WAV {path!r}: {exc}")
    if rate not in ALLOWED_SAMPLE_RATES:
        raise ParameterError(
            f"WAV sample rate {rate} not in {sorted(ALLOWED_SAMPLE_RATES)}"
        )
    if channels > 1:
        print(f"warning: averaging {channels} channels down to mono", file=sys.stderr)
        frames = downmix_to_mono(frames, channels)
    return resample_linear(frames, rate, 16000)


class TurnCollector:
    """Accumulates one turn's server events."""

    def __init__(self):
        self.agent_audio = bytearray()
        self.transcript_final: Optional[str] = None
        self.report_data: Optional[dict] = None
        self.failure: Optional[str] = None
        self.turn_ended = asyncio.Event()

    def on_incoming(self, incoming) -> None:
        if isinstance(incoming, bytes):
            frame = wire.parse_frame(incoming)
            self.agent_audio.extend(frame.payload)
            return
        event: ServerEvent = incoming
        if event.event == wire.EV_TRANSCRIPT_FINAL:
            self.transcript_final = event.data.get("text")
        elif event.event == wire.EV_METRICS_TURN:
            self.report_data = event.data
            self.turn_ended.set()
        elif event.event == wire.EV_AGENT_TURN_END:
            if event.data.get("interrupted"):
                self.turn_ended.set()
        elif event.event == wire.EV_ERROR:
            code = event.data.get("code")
            if code in ("adapter_error", "stage_failed"):
                self.failure = event.data.get("message", code)


def report_from_event(session: uuid.UUID, data: dict) -> LatencyReport:
    marks = {}
    for name, at in (data.get("marks") or {}).items():
        try:
            marks[MarkKind(name)] = at
        except ValueError:
            continue
    return LatencyReport(
        session=session,
        turn=data.get("turn", 0),
        complete=bool(data.get("complete")),
        interrupted=bool(data.get("interrupted")),
        eos_to_first_audio_ms=data.get("eos_to_first_audio_ms"),
        marks=marks,
        stale_packets=data.get("stale_packets", 0),
    )


async def push_wav(
    url: str,
    in_path: str,
    out_path: str,
    report_path: Optional[str] = None,
    timeout_s: float = 10.0,
    token: Optional[str] = None,
    figure: bool = True,
) -> int:
    try:
        pcm = load_input_wav(in_path)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        session = await WsSession.connect(
            url, caps={"audio_in": True, "audio_out": True}, token=token
        )
    except ConnectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONNECT

    collector = TurnCollector()

    async def read_events():
        async for incoming in session.events():
            collector.on_incoming(incoming)
            if collector.turn_ended.is_set():
                return

    reader = asyncio.get_running_loop().create_task(read_events())
    try:
        pcm += bytes(2 * (16000 * TRAILING_SILENCE_MS // 1000))
        for i in range(0, len(pcm), FRAME_BYTES):
            await session.send_audio(pcm[i : i + FRAME_BYTES], capture_micros=i // 2 * 1_000_000 // 16000)
            await asyncio.sleep(FRAME_MS / 1000.0)
        try:
            await asyncio.wait_for(collector.turn_ended.wait(), timeout_s)
        except asyncio.TimeoutError:
            if collector.failure:
                print(f"error: turn failed: {collector.failure}", file=sys.stderr)
                return EXIT_TURN_FAILED
            print(
                f"error: no agent turn within {timeout_s:.0f} s "
                "(utterance not detected?)",
                file=sys.stderr,
            )
            return EXIT_ENDPOINT_TIMEOUT
    finally:
        reader.cancel()
        await session.close()

    if collector.failure:
        print(f"error: turn failed: {collector.failure}", file=sys.stderr)
        return EXIT_TURN_FAILED

    write_wav(out_path, bytes(collector.agent_audio))
    duration_ms = len(collector.agent_audio) // 2 * 1000 // 16000
    print(f"agent reply: {duration_ms} ms of audio -> {out_path}")
    if collector.transcript_final is not None:
        print(f"transcript: {collector.transcript_final}")

    if collector.report_data is not None:
        report = report_from_event(session.session_id, collector.report_data)
        if report.eos_to_first_audio_ms is not None:
            print(f"eos -> first audio: {report.eos_to_first_audio_ms} ms")
        if report_path:
            write_report(report_path, [report])
            if figure:
                render_latency_figure(
                    Path(report_path).with_suffix(".png"), [report], title="push-wav turn"
                )
            print(f"report -> {report_path}")
    return EXIT_OK
