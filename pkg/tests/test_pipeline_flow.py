"""Orchestrator behavior: routing, turn machine, cancellation, teardown."""
from __future__ import annotations

import asyncio

import pytest

from voicepipe.errors import ConfigError, StageSpawnError
from voicepipe.packets import (
    AudioPayload,
    ControlSignal,
    PayloadKind,
    TextFinality,
    TextPayload,
    TextRole,
)
from voicepipe.pipeline import (
    PipelineConfig,
    PipelineOptions,
    TurnEvent,
    TurnPhase,
    TurnState,
    advance_turn,
    build_pipeline,
    validate_config,
)
from voicepipe.runtime import Stage, StageDescriptor, StageState
from voicepipe.stages.registry import StageKindInfo, default_registry, register_stage
from voicepipe.audio import sine_pcm
from conftest import FAST_TIMINGS, mock_agent_config, run

TEXT = frozenset({PayloadKind.TEXT})


class Recorder(Stage):
    """Collects every window it receives."""

    instances: list["Recorder"] = []

    def __init__(self):
        self.windows = []
        Recorder.instances.append(self)

    async def on_window(self, window, emit):
        self.windows.append(window)


class FailsOnStart(Stage):
    async def on_start(self, params):
        raise RuntimeError("spawn failure injected")


def registry_with(**kinds):
    registry = default_registry()
    for name, factory in kinds.items():
        register_stage(registry, name, factory, TEXT, TEXT, deterministic=True)
    return registry


def simple_plan(stages, edges, sources, sinks, handoff="sentence"):
    return validate_config(
        PipelineConfig(
            stages=stages,
            edges=edges,
            sources=sources,
            sinks=sinks,
            options=PipelineOptions(tts_handoff=handoff),
        )
    )


def echo_descriptor(sid="echo"):
    return StageDescriptor(
        id=sid,
        kind="echo",
        accepts=frozenset({PayloadKind.TEXT, PayloadKind.AUDIO}),
        emits=frozenset({PayloadKind.TEXT, PayloadKind.AUDIO}),
    )


async def drain(pipeline, settle_s=0.05):
    await asyncio.sleep(settle_s)


class TestDispatch:
    def test_echo_pipeline_round_trips_text(self):
        async def body():
            plan = simple_plan([echo_descriptor()], [], ["echo"], ["echo"])
            delivered = []
            pipeline = await build_pipeline(
                plan, default_registry(), deliver=delivered.append
            )
            pipeline.ingest_text("hi")
            await drain(pipeline)
            await pipeline.shutdown()
            texts = [p for p in delivered if p.kind is PayloadKind.TEXT]
            assert [p.payload.text for p in texts] == ["hi"]
            assert texts[0].source.id == "echo"

        run(body())

    def test_fanout_delivers_exactly_once_to_each_successor(self):
        async def body():
            Recorder.instances = []
            registry = registry_with(recorder=Recorder)
            stages = [
                echo_descriptor("src"),
                StageDescriptor(id="a", kind="recorder", accepts=TEXT, emits=TEXT),
                StageDescriptor(id="b", kind="recorder", accepts=TEXT, emits=TEXT),
            ]
            plan = simple_plan(stages, [("src", "a"), ("src", "b")], ["src"], ["src"])
            pipeline = await build_pipeline(plan, registry)
            pipeline.ingest_text("fan")
            await drain(pipeline)
            await pipeline.shutdown()
            a, b = Recorder.instances
            assert len(a.windows) == 1 and len(b.windows) == 1
            assert a.windows[0].packets[0].payload.text == "fan"
            assert a.windows[0].packets[0].id == b.windows[0].packets[0].id

        run(body())

    def test_stale_packet_discarded_and_counted(self):
        async def body():
            plan = simple_plan([echo_descriptor()], [], ["echo"], ["echo"])
            delivered = []
            pipeline = await build_pipeline(
                plan, default_registry(), deliver=delivered.append
            )
            # Hand-craft a packet for a turn that has already been left behind.
            pipeline.turn_state = TurnState(TurnPhase.IDLE, 5, False)
            stale = pipeline._make_packet(
                pipeline.stages["echo"].ctx.source,
                2,
                TextPayload("old", TextRole.AGENT, TextFinality.FINAL),
                pipeline.clock.now_micros(),
            )
            pipeline.dispatch(stale, origin="echo")
            await drain(pipeline)
            await pipeline.shutdown()
            assert delivered == []
            report_stale = pipeline.metrics._stale.get((pipeline.session, 2), 0)
            assert report_stale == 1

        run(body())


class TestBuild:
    def test_unknown_stage_kind_is_named(self):
        async def body():
            plan = simple_plan(
                [StageDescriptor(id="x", kind="xtts_adapter", accepts=TEXT, emits=TEXT)],
                [],
                ["x"],
                ["x"],
            )
            with pytest.raises(ConfigError, match="unknown stage kind: xtts_adapter"):
                await build_pipeline(plan, default_registry())

        run(body())

    def test_spawn_failure_tears_down_earlier_stages(self):
        spawned = []

        class Tracks(Recorder):
            async def on_stop(self):
                spawned.append("stopped")

        async def body():
            registry = registry_with(tracks=Tracks, failer=FailsOnStart)
            stages = [
                StageDescriptor(id="first", kind="tracks", accepts=TEXT, emits=TEXT),
                StageDescriptor(id="second", kind="failer", accepts=TEXT, emits=TEXT),
            ]
            plan = simple_plan(stages, [("first", "second")], ["first"], ["first"])
            with pytest.raises(StageSpawnError, match="second"):
                await build_pipeline(plan, registry)
            assert spawned == ["stopped"]

        run(body())


class TestTurnMachine:
    @pytest.mark.parametrize(
        "phase,event,expected_phase,legal",
        [
            (TurnPhase.IDLE, TurnEvent.UTTERANCE_START, TurnPhase.USER_SPEAKING, True),
            (TurnPhase.USER_SPEAKING, TurnEvent.UTTERANCE_END, TurnPhase.PROCESSING, True),
            (TurnPhase.PROCESSING, TurnEvent.AGENT_AUDIO, TurnPhase.AGENT_SPEAKING, True),
            (TurnPhase.AGENT_SPEAKING, TurnEvent.TURN_END, TurnPhase.IDLE, True),
            (TurnPhase.PROCESSING, TurnEvent.TURN_END, TurnPhase.IDLE, True),
            (TurnPhase.PROCESSING, TurnEvent.UTTERANCE_START, TurnPhase.PROCESSING, False),
            (TurnPhase.IDLE, TurnEvent.UTTERANCE_END, TurnPhase.IDLE, False),
            (TurnPhase.AGENT_SPEAKING, TurnEvent.AGENT_AUDIO, TurnPhase.AGENT_SPEAKING, False),
        ],
    )
    def test_transition_table(self, phase, event, expected_phase, legal):
        state = TurnState(phase, 3, False)
        new_state, was_legal = advance_turn(state, event)
        assert new_state.state is expected_phase
        assert was_legal is legal
        if not legal:
            assert new_state == state

    def test_interrupt_from_any_state_increments_turn(self):
        for phase in TurnPhase:
            state, legal = advance_turn(TurnState(phase, 7, False), TurnEvent.INTERRUPT)
            assert legal
            assert state == TurnState(TurnPhase.IDLE, 8, True)

    def test_turn_end_increments_turn(self):
        state, _ = advance_turn(
            TurnState(TurnPhase.AGENT_SPEAKING, 2, False), TurnEvent.TURN_END
        )
        assert state.turn == 3

    def test_determinism_pure_function(self):
        state = TurnState(TurnPhase.PROCESSING, 1, False)
        results = {advance_turn(state, TurnEvent.AGENT_AUDIO) for _ in range(10)}
        assert len(results) == 1


class TestInterrupt:
    def test_interrupt_idle_quiescent_session_is_noop(self):
        async def body():
            plan = simple_plan([echo_descriptor()], [], ["echo"], ["echo"])
            pipeline = await build_pipeline(plan, default_registry())
            before = pipeline.turn_state
            pipeline.interrupt()
            await drain(pipeline)
            assert pipeline.turn_state == before
            await pipeline.shutdown()

        run(body())

    def test_interrupt_mid_turn_increments_and_acks(self):
        async def body():
            notes = []
            config = mock_agent_config(
                with_vad=False, text_source=True, timing_overrides=FAST_TIMINGS
            )
            plan = validate_config(config)
            pipeline = await build_pipeline(
                plan, default_registry(), notify=lambda k, d: notes.append((k, d))
            )
            pipeline.ingest_text("hello")
            await asyncio.sleep(0.05)  # mid-reply
            pipeline.interrupt()
            await drain(pipeline, 0.1)
            assert pipeline.turn_state.turn == 1
            assert pipeline.turn_state.interrupted
            acks = [d for k, d in notes if k == "turn.end"]
            assert acks and acks[0]["interrupted"] is True
            await pipeline.shutdown()

        run(body())

    def test_no_agent_output_after_interrupt_ack(self):
        async def body():
            order = []
            config = mock_agent_config(
                with_vad=False,
                text_source=True,
                timing_overrides=FAST_TIMINGS,
                tts_pace="realtime",
            )
            plan = validate_config(config)
            pipeline = await build_pipeline(
                plan,
                default_registry(),
                deliver=lambda p: order.append(("packet", p.kind, p.turn)),
                notify=lambda k, d: order.append(("note", k, d.get("interrupted"))),
            )
            pipeline.ingest_text("hello")
            await asyncio.sleep(0.12)  # agent should be speaking by now
            pipeline.interrupt()
            await asyncio.sleep(0.3)  # any stragglers would arrive here
            await pipeline.shutdown()
            ack_index = order.index(("note", "turn.end", True))
            after = [item for item in order[ack_index + 1 :] if item[0] == "packet"]
            stale_audio = [item for item in after if item[1] is PayloadKind.AUDIO and item[2] == 0]
            assert stale_audio == []

        run(body())


class TestHandoffModes:
    def test_full_handoff_buffers_whole_reply_into_one_chunk(self):
        chunks = []

        class ChunkRecorder(Stage):
            async def on_window(self, window, emit):
                for p in window.packets:
                    if p.kind is PayloadKind.TEXT:
                        chunks.append(p.payload.text)

        async def body():
            registry = registry_with(chunksink=ChunkRecorder)
            config = mock_agent_config(
                with_vad=False, text_source=True, timing_overrides=FAST_TIMINGS,
                tts_handoff="full",
            )
            config.stages = [s for s in config.stages if s.id != "tts"] + [
                StageDescriptor(id="tts", kind="chunksink", accepts=TEXT, emits=TEXT)
            ]
            plan = validate_config(config)
            pipeline = await build_pipeline(plan, registry)
            pipeline.ingest_text("hello")
            await asyncio.sleep(0.5)
            await pipeline.shutdown()
            from conftest import LLM_TOKENS_20

            assert chunks == ["".join(LLM_TOKENS_20)]

        run(body())

    def test_sentence_handoff_streams_two_chunks(self):
        chunks = []

        class ChunkRecorder(Stage):
            async def on_window(self, window, emit):
                for p in window.packets:
                    if p.kind is PayloadKind.TEXT:
                        chunks.append(p.payload.text)

        async def body():
            registry = registry_with(chunksink=ChunkRecorder)
            config = mock_agent_config(
                with_vad=False, text_source=True, timing_overrides=FAST_TIMINGS,
                tts_handoff="sentence",
            )
            config.stages = [s for s in config.stages if s.id != "tts"] + [
                StageDescriptor(id="tts", kind="chunksink", accepts=TEXT, emits=TEXT)
            ]
            plan = validate_config(config)
            pipeline = await build_pipeline(plan, registry)
            pipeline.ingest_text("hello")
            await asyncio.sleep(0.5)
            await pipeline.shutdown()
            assert chunks == [
                "Sure thing friend that all sounds quite good.",
                "Let us keep talking and see where this neat chat goes today.",
            ]

        run(body())


class TestWarnCounter:
    def test_illegal_turn_events_warn_not_crash(self):
        async def body():
            config = mock_agent_config(with_vad=False, timing_overrides=FAST_TIMINGS)
            plan = validate_config(config)
            pipeline = await build_pipeline(plan, default_registry())
            # utterance_end while idle and no audio: ingest_end implies a
            # start, so instead drive an end twice in a row.
            pipeline.ingest_audio(AudioPayload(16000, sine_pcm(320)))
            pipeline.ingest_end_utterance()
            pipeline.ingest_end_utterance()  # second end: illegal in processing
            await drain(pipeline)
            assert pipeline.warn_count >= 1
            await pipeline.shutdown()

        run(body())
