"""In-process latency benchmark over a deterministic (mock) pipeline.

Runs N synthetic turns through the configured stage graph without any
network and collects per-turn end-of-speech → first-audio latency. Audio
injection is firehosed: the VAD counts frame durations, not wall time, so
endpoint timestamps stay exact while the run finishes quickly.
"""
from __future__ import annotations

import asyncio
from pathlib import Path
from typing import Optional

from .audio import sine_pcm
from .errors import ConfigError
from .metrics import LatencyReport
from .packets import AudioPayload, PayloadKind
from .pipeline import Pipeline, PipelineConfig, build_pipeline, validate_config
from .report import render_latency_figure, write_report
from .stages.registry import StageKindInfo

BENCH_FRAME_MS = 20
BENCH_FRAME_SAMPLES = 16000 * BENCH_FRAME_MS // 1000


def check_deterministic(config: PipelineConfig, registry: dict[str, StageKindInfo]) -> None:
    bad = sorted(
        {d.kind for d in config.stages if d.kind in registry and not registry[d.kind].deterministic}
    )
    if bad:
        raise ConfigError(
            "bench requires deterministic stages; non-mock kinds: " + ", ".join(bad)
        )


async def run_bench(
    config: PipelineConfig,
    registry: dict[str, StageKindInfo],
    turns: int,
    handoff: Optional[str] = None,
    turn_timeout_s: float = 30.0,
) -> tuple[list[LatencyReport], dict]:
    check_deterministic(config, registry)
    if handoff is not None:
        config.options = type(config.options)(tts_handoff=handoff)
    plan = validate_config(config)
    pipeline = await build_pipeline(plan, registry)
    try:
        reports = []
        for i in range(turns):
            await _run_turn(pipeline, plan, i, turn_timeout_s)
            reports.append(pipeline.metrics.turn_report(pipeline.session, i))
        summary = pipeline.metrics.summarize(pipeline.session)
        return reports, summary
    finally:
        await pipeline.shutdown()


async def _run_turn(pipeline: Pipeline, plan, turn: int, timeout_s: float) -> None:
    descriptors = plan.descriptors
    has_vad = any(d.kind == "vad" for d in plan.config.stages)
    audio_sources = [
        sid for sid in plan.config.sources
        if PayloadKind.AUDIO in descriptors[sid].accepts
    ]
    if audio_sources:
        vad_params = {}
        if has_vad:
            vad_params = next(d for d in plan.config.stages if d.kind == "vad").params
        frame_ms = int(vad_params.get("frame_ms", 20))
        start_frames = int(vad_params.get("start_frames", 3))
        hangover_ms = int(vad_params.get("hangover_ms", 600))
        speech_ms = max(400, (start_frames + 2) * frame_ms)
        for _ in range(_frames(speech_ms)):
            pipeline.ingest_audio(
                AudioPayload(sample_rate_hz=16000, samples=sine_pcm(BENCH_FRAME_SAMPLES))
            )
        if has_vad:
            trailing_ms = hangover_ms + 3 * frame_ms
            for _ in range(_frames(trailing_ms)):
                pipeline.ingest_audio(
                    AudioPayload(sample_rate_hz=16000, samples=bytes(2 * BENCH_FRAME_SAMPLES))
                )
        else:
            pipeline.ingest_end_utterance()
    else:
        pipeline.ingest_text(f"bench turn {turn}")

    if not await _wait_for_turn(pipeline, turn, timeout_s):
        raise TimeoutError(f"turn {turn} did not complete within {timeout_s} s")


def _frames(duration_ms: int) -> int:
    return (duration_ms + BENCH_FRAME_MS - 1) // BENCH_FRAME_MS


async def _wait_for_turn(pipeline: Pipeline, turn: int, timeout_s: float) -> bool:
    loop = asyncio.get_running_loop()
    deadline = loop.time() + timeout_s
    while pipeline.current_turn <= turn:
        if loop.time() >= deadline:
            return False
        await asyncio.sleep(0.005)
    return True


def write_bench_outputs(
    out_path: str | Path,
    reports: list[LatencyReport],
    summary: dict,
    figure: bool = True,
) -> Optional[Path]:
    out_path = Path(out_path)
    write_report(out_path, reports, summary)
    if not figure:
        return None
    fig_path = out_path.with_suffix(".png")
    render_latency_figure(fig_path, reports, summary)
    return fig_path
