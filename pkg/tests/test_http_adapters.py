"""HTTP adapters against stub services: contracts, faults, degradation."""
from __future__ import annotations

import asyncio
import io
import json
import os
import uuid
import wave

import pytest
from aiohttp import web

from voicepipe.audio import sine_pcm
from voicepipe.errors import ConfigError
from voicepipe.packets import (
    AudioPayload,
    ControlSignal,
    PayloadKind,
    SequenceCounters,
    SessionClock,
    Source,
    SourceKind,
    TextFinality,
    TextPayload,
    TextRole,
    new_packet,
    window_of,
)
from voicepipe.runtime import StageContext, StageDescriptor
from voicepipe.stages.http import HttpAsrStage, HttpLlmStage, HttpTtsStage
from conftest import run

AUDIO = frozenset({PayloadKind.AUDIO})
TEXT = frozenset({PayloadKind.TEXT})


class StubService:
    """Tiny aiohttp app bound to an ephemeral port."""

    def __init__(self, routes):
        self.app = web.Application()
        for method, path, handler in routes:
            self.app.router.add_route(method, path, handler)
        self.runner = None
        self.port = None

    async def __aenter__(self):
        self.runner = web.AppRunner(self.app)
        await self.runner.setup()
        site = web.TCPSite(self.runner, "127.0.0.1", 0)
        await site.start()
        self.port = site._server.sockets[0].getsockname()[1]
        return self

    async def __aexit__(self, *exc):
        await self.runner.cleanup()

    def url(self, path):
        return f"http://127.0.0.1:{self.port}{path}"


def make_stage(stage_cls, params, accepts=TEXT, emits=TEXT):
    desc = StageDescriptor(
        id="adapter", kind="http", accepts=accepts, emits=emits, params=params
    )
    sink = []
    errors = []
    ctx = StageContext(
        descriptor=desc,
        session=uuid.uuid4(),
        clock=SessionClock(),
        counters=SequenceCounters(),
        emit=sink.append,
        report_error=lambda code, message: errors.append((code, message)),
        is_stale=lambda turn: False,
    )
    stage = stage_cls()
    stage.ctx = ctx
    return stage, sink, errors, ctx


def audio_window(ctx, n=3):
    packets = [
        new_packet(
            Source(SourceKind.CLIENT, "mic"),
            ctx.session,
            0,
            AudioPayload(16000, sine_pcm(320)),
            ctx.clock,
            ctx.counters,
        )
        for _ in range(n)
    ]
    return window_of(packets)


def prompt_window(ctx, text="hello"):
    return window_of(
        [
            new_packet(
                Source(SourceKind.STAGE, "asr"),
                ctx.session,
                0,
                TextPayload(text, TextRole.USER, TextFinality.FINAL),
                ctx.clock,
                ctx.counters,
            )
        ]
    )


class TestAsrAdapter:
    def test_posts_wav_and_emits_final_text(self):
        received = {}

        async def transcribe(request):
            body = await request.read()
            received["content_type"] = request.headers.get("Content-Type")
            with wave.open(io.BytesIO(body)) as wf:
                received["rate"] = wf.getframerate()
                received["channels"] = wf.getnchannels()
                received["n"] = wf.getnframes()
            return web.json_response({"text": "ok"})

        async def body():
            async with StubService([("POST", "/asr", transcribe)]) as stub:
                stage, sink, errors, ctx = make_stage(
                    HttpAsrStage, {"base_url": ""}, accepts=AUDIO
                )
                await stage.on_start({"base_url": stub.url("/asr")})
                await stage.on_window(audio_window(ctx), sink.append)
                await stage.on_stop()
            assert received == {"content_type": "audio/wav", "rate": 16000, "channels": 1, "n": 960}
            assert len(sink) == 1
            payload = sink[0].payload
            assert payload.text == "ok"
            assert payload.role is TextRole.USER
            assert payload.finality is TextFinality.FINAL
            assert errors == []

        run(body())

    def test_http_error_degrades_turn(self):
        async def fail(request):
            return web.Response(status=500, text="nope")

        async def body():
            async with StubService([("POST", "/asr", fail)]) as stub:
                stage, sink, errors, ctx = make_stage(
                    HttpAsrStage, {}, accepts=AUDIO
                )
                await stage.on_start({"base_url": stub.url("/asr")})
                await stage.on_window(audio_window(ctx), sink.append)
                await stage.on_stop()
            assert errors and errors[0][0] == "adapter_error"
            texts = [p for p in sink if p.kind is PayloadKind.TEXT]
            controls = [p for p in sink if p.kind is PayloadKind.CONTROL]
            assert texts[0].payload.text == "…"
            assert texts[0].payload.role is TextRole.AGENT
            assert controls[0].payload.signal is ControlSignal.TURN_END

        run(body())

    def test_timeout_then_next_turn_succeeds(self):
        calls = {"n": 0}

        async def flaky(request):
            calls["n"] += 1
            if calls["n"] == 1:
                await asyncio.sleep(1.0)
            return web.json_response({"text": "recovered"})

        async def body():
            async with StubService([("POST", "/asr", flaky)]) as stub:
                stage, sink, errors, ctx = make_stage(HttpAsrStage, {}, accepts=AUDIO)
                await stage.on_start({"base_url": stub.url("/asr"), "timeout_ms": 150})
                await stage.on_window(audio_window(ctx), sink.append)
                assert errors  # first turn failed
                sink.clear()
                await stage.on_window(audio_window(ctx), sink.append)
                texts = [p for p in sink if p.kind is PayloadKind.TEXT]
                assert texts and texts[0].payload.text == "recovered"
                await stage.on_stop()

        run(body())

    def test_missing_auth_env_var_is_named_config_error(self):
        async def body():
            stage, _, _, _ = make_stage(HttpAsrStage, {}, accepts=AUDIO)
            os.environ.pop("VOICEPIPE_TEST_TOKEN", None)
            with pytest.raises(ConfigError, match="VOICEPIPE_TEST_TOKEN"):
                await stage.on_start(
                    {"base_url": "http://x/", "auth_token_env": "VOICEPIPE_TEST_TOKEN"}
                )

        run(body())

    def test_auth_header_sent_when_env_present(self):
        seen = {}

        async def transcribe(request):
            seen["auth"] = request.headers.get("Authorization")
            return web.json_response({"text": "ok"})

        async def body():
            async with StubService([("POST", "/asr", transcribe)]) as stub:
                stage, sink, _, ctx = make_stage(HttpAsrStage, {}, accepts=AUDIO)
                os.environ["VOICEPIPE_TEST_TOKEN"] = "s3cret"
                try:
                    await stage.on_start(
                        {
                            "base_url": stub.url("/asr"),
                            "auth_token_env": "VOICEPIPE_TEST_TOKEN",
                        }
                    )
                    await stage.on_window(audio_window(ctx), sink.append)
                finally:
                    os.environ.pop("VOICEPIPE_TEST_TOKEN", None)
                await stage.on_stop()
            assert seen["auth"] == "Bearer s3cret"

        run(body())


class TestLlmAdapter:
    def test_streams_deltas_until_done(self):
        async def complete(request):
            body = await request.json()
            assert body["messages"][-1] == {"role": "user", "content": "hello"}
            resp = web.StreamResponse()
            await resp.prepare(request)
            for delta in ["Hel", "lo ", "there."]:
                await resp.write(json.dumps({"delta": delta}).encode() + b"\n")
            await resp.write(json.dumps({"done": True}).encode() + b"\n")
            return resp

        async def body():
            async with StubService([("POST", "/llm", complete)]) as stub:
                stage, sink, errors, ctx = make_stage(HttpLlmStage, {})
                await stage.on_start({"base_url": stub.url("/llm")})
                await stage.on_window(prompt_window(ctx), sink.append)
                await stage.on_stop()
            deltas = [p.payload.text for p in sink if p.kind is PayloadKind.TEXT]
            assert deltas == ["Hel", "lo ", "there."]
            assert sink[-1].payload.signal is ControlSignal.FLUSH
            assert errors == []
            assert stage.history[-1] == {"role": "assistant", "content": "Hello there."}

        run(body())

    def test_malformed_stream_degrades_turn(self):
        async def complete(request):
            resp = web.StreamResponse()
            await resp.prepare(request)
            await resp.write(b"this is not json\n")
            return resp

        async def body():
            async with StubService([("POST", "/llm", complete)]) as stub:
                stage, sink, errors, ctx = make_stage(HttpLlmStage, {})
                await stage.on_start({"base_url": stub.url("/llm")})
                await stage.on_window(prompt_window(ctx), sink.append)
                await stage.on_stop()
            assert errors and errors[0][0] == "adapter_error"
            assert any(
                p.kind is PayloadKind.CONTROL
                and p.payload.signal is ControlSignal.TURN_END
                for p in sink
            )

        run(body())


class TestTtsAdapter:
    def test_pcm_response_framed_at_20ms(self):
        async def synthesize(request):
            body = await request.json()
            assert body == {"text": "Hi."}
            return web.Response(
                body=sine_pcm(1600), headers={"X-Sample-Rate": "16000"}
            )

        async def body():
            async with StubService([("POST", "/tts", synthesize)]) as stub:
                stage, sink, errors, ctx = make_stage(HttpTtsStage, {}, emits=AUDIO)
                await stage.on_start({"base_url": stub.url("/tts")})
                await stage.on_window(
                    prompt_window(ctx, "Hi."), sink.append
                )
                await stage.on_stop()
            frames = [p for p in sink if p.kind is PayloadKind.AUDIO]
            assert len(frames) == 5  # 100 ms at 20 ms frames
            assert sum(p.payload.sample_count for p in frames) == 1600
            assert errors == []

        run(body())

    def test_non_16k_response_resampled(self):
        async def synthesize(request):
            return web.Response(
                body=sine_pcm(800, sample_rate_hz=8000),
                headers={"X-Sample-Rate": "8000"},
            )

        async def body():
            async with StubService([("POST", "/tts", synthesize)]) as stub:
                stage, sink, _, ctx = make_stage(HttpTtsStage, {}, emits=AUDIO)
                await stage.on_start({"base_url": stub.url("/tts")})
                await stage.on_window(prompt_window(ctx, "x y"), sink.append)
                await stage.on_stop()
            total = sum(
                p.payload.sample_count for p in sink if p.kind is PayloadKind.AUDIO
            )
            assert total == 1600  # 100 ms of 8 kHz becomes 100 ms of 16 kHz

        run(body())

    def test_identity_resample_at_16k(self):
        source = sine_pcm(320)

        async def synthesize(request):
            return web.Response(body=source, headers={"X-Sample-Rate": "16000"})

        async def body():
            async with StubService([("POST", "/tts", synthesize)]) as stub:
                stage, sink, _, ctx = make_stage(HttpTtsStage, {}, emits=AUDIO)
                await stage.on_start({"base_url": stub.url("/tts")})
                await stage.on_window(prompt_window(ctx, "x"), sink.append)
                await stage.on_stop()
            joined = b"".join(
                p.payload.samples for p in sink if p.kind is PayloadKind.AUDIO
            )
            assert joined == source

        run(body())


class TestCommon:
    def test_missing_base_url_rejected(self):
        async def body():
            stage, _, _, _ = make_stage(HttpLlmStage, {})
            with pytest.raises(ConfigError, match="base_url"):
                await stage.on_start({})

        run(body())
