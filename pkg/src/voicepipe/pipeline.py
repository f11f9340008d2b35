"""Pipeline orchestration: graph validation, packet routing, turn state.

A pipeline instance is private to one session. All routing decisions for
the session flow through a single router task, giving turn transitions a
total order; stage workers communicate with it only through queues.
"""
from __future__ import annotations

import asyncio
import logging
import uuid
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional

from .errors import ConfigError, LifecycleError, StageSpawnError, ValidationError
from .metrics import Mark, MarkKind, MetricsStore
from .packets import (
    AudioPayload,
    ControlPayload,
    ControlSignal,
    DataPacket,
    DataWindow,
    PayloadKind,
    SequenceCounters,
    SessionClock,
    SessionId,
    Source,
    SourceKind,
    TextFinality,
    TextPayload,
    TextRole,
    window_of,
)
from .runtime import StageContext, StageDescriptor, StageHandle, StageState, spawn_stage
from .segmenter import SentenceSegmenter
from .stages.registry import StageKindInfo

logger = logging.getLogger(__name__)

CLIENT_KINDS = frozenset({PayloadKind.AUDIO, PayloadKind.TEXT})

TTS_HANDOFF_SENTENCE = "sentence"
TTS_HANDOFF_FULL = "full"


@dataclass(frozen=True)
class PipelineOptions:
    tts_handoff: str = TTS_HANDOFF_SENTENCE


@dataclass
class PipelineConfig:
    stages: list[StageDescriptor]
    edges: list[tuple[str, str]]
    sources: list[str]
    sinks: list[str]
    options: PipelineOptions = field(default_factory=PipelineOptions)


@dataclass(frozen=True)
class ValidatedPlan:
    topo_order: tuple[str, ...]
    edge_map: dict  # stage id -> tuple of successor ids
    kind_checked: bool
    config: PipelineConfig

    @property
    def descriptors(self) -> dict[str, StageDescriptor]:
        return {d.id: d for d in self.config.stages}


def validate_config(config: PipelineConfig) -> ValidatedPlan:
    """Check the whole graph, reporting every violation, not just the first."""
    violations: list[str] = []
    ids: list[str] = []
    for desc in config.stages:
        violations.extend(desc.validate())
        if desc.id in ids:
            violations.append(f"duplicate stage id {desc.id!r}")
        ids.append(desc.id)
    declared = set(ids)
    by_id = {d.id: d for d in config.stages}

    seen_edges = set()
    for a, b in config.edges:
        for end in (a, b):
            if end not in declared:
                violations.append(f"edge ({a}, {b}) references undeclared stage {end!r}")
        if (a, b) in seen_edges:
            violations.append(f"duplicate edge ({a}, {b})")
        seen_edges.add((a, b))
        if a in by_id and b in by_id:
            overlap = by_id[a].emits & by_id[b].accepts
            if not overlap:
                violations.append(
                    f"edge ({a}, {b}) kind mismatch: {a} emits "
                    f"{sorted(k.value for k in by_id[a].emits)} but {b} accepts "
                    f"{sorted(k.value for k in by_id[b].accepts)}"
                )

    if not config.sources:
        violations.append("sources must be non-empty")
    if not config.sinks:
        violations.append("sinks must be non-empty")
    for sid in config.sources:
        if sid not in declared:
            violations.append(f"source references undeclared stage {sid!r}")
        elif not (by_id[sid].accepts & CLIENT_KINDS):
            violations.append(
                f"source {sid!r} accepts no client input kind (audio or text)"
            )
    for sid in config.sinks:
        if sid not in declared:
            violations.append(f"sink references undeclared stage {sid!r}")
        elif not (by_id[sid].emits & CLIENT_KINDS):
            violations.append(
                f"sink {sid!r} emits no client-deliverable kind (audio or text)"
            )

    if config.options.tts_handoff not in (TTS_HANDOFF_SENTENCE, TTS_HANDOFF_FULL):
        violations.append(
            f"options.tts_handoff must be sentence or full, "
            f"got {config.options.tts_handoff!r}"
        )

    topo: list[str] = []
    if not violations:
        topo, cycle = _topo_sort(ids, config.edges)
        if cycle:
            violations.append("cycle through stages: " + " -> ".join(cycle))

    if violations:
        raise ValidationError(violations)

    edge_map: dict[str, tuple[str, ...]] = {sid: () for sid in ids}
    for a, b in config.edges:
        edge_map[a] = edge_map[a] + (b,)
    return ValidatedPlan(
        topo_order=tuple(topo), edge_map=edge_map, kind_checked=True, config=config
    )


def _topo_sort(ids: list[str], edges: list[tuple[str, str]]):
    """Kahn's algorithm, stable in declaration order; returns (order, cycle)."""
    indeg = {sid: 0 for sid in ids}
    succs: dict[str, list[str]] = {sid: [] for sid in ids}
    for a, b in edges:
        succs[a].append(b)
        indeg[b] += 1
    ready = [sid for sid in ids if indeg[sid] == 0]
    order: list[str] = []
    while ready:
        node = ready.pop(0)
        order.append(node)
        for nxt in succs[node]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
    if len(order) == len(ids):
        return order, None
    remaining = [sid for sid in ids if indeg[sid] > 0]
    return order, _find_cycle(remaining, succs)


def _find_cycle(remaining: list[str], succs: dict[str, list[str]]) -> list[str]:
    nodes = set(remaining)
    path: list[str] = []
    on_path: set[str] = set()

    def walk(node: str) -> Optional[list[str]]:
        path.append(node)
        on_path.add(node)
        for nxt in succs[node]:
            if nxt not in nodes:
                continue
            if nxt in on_path:
                return path[path.index(nxt) :]
            found = walk(nxt)
            if found:
                return found
        path.pop()
        on_path.discard(node)
        return None

    for start in remaining:
        if start in on_path:
            continue
        found = walk(start)
        if found:
            return found
    return remaining  # unreachable in practice


class TurnPhase(Enum):
    IDLE = "idle"
    USER_SPEAKING = "user_speaking"
    PROCESSING = "processing"
    AGENT_SPEAKING = "agent_speaking"


class TurnEvent(Enum):
    UTTERANCE_START = "utterance_start"
    UTTERANCE_END = "utterance_end"
    AGENT_AUDIO = "agent_audio"
    TURN_END = "turn_end"
    INTERRUPT = "interrupt"


@dataclass(frozen=True, slots=True)
class TurnState:
    state: TurnPhase = TurnPhase.IDLE
    turn: int = 0
    interrupted: bool = False


_TURN_TABLE = {
    (TurnPhase.IDLE, TurnEvent.UTTERANCE_START): TurnPhase.USER_SPEAKING,
    (TurnPhase.USER_SPEAKING, TurnEvent.UTTERANCE_END): TurnPhase.PROCESSING,
    (TurnPhase.PROCESSING, TurnEvent.AGENT_AUDIO): TurnPhase.AGENT_SPEAKING,
    (TurnPhase.AGENT_SPEAKING, TurnEvent.TURN_END): TurnPhase.IDLE,
    # A turn with no agent audio (text-only pipeline, degraded adapter turn)
    # still has to close.
    (TurnPhase.PROCESSING, TurnEvent.TURN_END): TurnPhase.IDLE,
}


def advance_turn(state: TurnState, event: TurnEvent) -> tuple[TurnState, bool]:
    """Pure transition; illegal events leave the state unchanged (legal=False)."""
    if event is TurnEvent.INTERRUPT:
        return TurnState(TurnPhase.IDLE, state.turn + 1, True), True
    nxt = _TURN_TABLE.get((state.state, event))
    if nxt is None:
        return state, False
    if event is TurnEvent.TURN_END:
        return TurnState(TurnPhase.IDLE, state.turn + 1, state.interrupted), True
    if event is TurnEvent.UTTERANCE_START:
        return TurnState(nxt, state.turn, False), True
    return replace(state, state=nxt), True


_INGRESS = None  # origin marker for client input

_MIC_SOURCE = Source(SourceKind.CLIENT, "mic")
_TEXT_SOURCE = Source(SourceKind.CLIENT, "text")
_CONTROL_SOURCE = Source(SourceKind.CLIENT, "control")


class Pipeline:
    """A session's spawned stage graph plus its router task."""

    def __init__(
        self,
        plan: ValidatedPlan,
        session: SessionId,
        clock: SessionClock,
        deliver: Callable[[DataPacket], None],
        notify: Callable[[str, dict], None],
    ):
        self.plan = plan
        self.session = session
        self.clock = clock
        self.deliver = deliver
        self.notify = notify
        self.counters = SequenceCounters()
        self.metrics = MetricsStore()
        self.turn_state = TurnState()
        self.warn_count = 0
        self.dropped_to_failed = 0
        self.stages: dict[str, StageHandle] = {}
        self.sinks = frozenset(plan.config.sinks)
        self._queue: asyncio.Queue = asyncio.Queue()
        self._router: Optional[asyncio.Task] = None
        self._failed_notified: set[str] = set()
        self._capability_warned: set[PayloadKind] = set()
        # per-(stage, turn) aggregation buffers; per-(stage, turn) text state
        self._agg: dict[tuple[str, int], list[DataPacket]] = {}
        self._segmenters: dict[tuple[str, int], SentenceSegmenter] = {}
        self._full_buffers: dict[tuple[str, int], list[str]] = {}
        self._turn_done: asyncio.Event = asyncio.Event()

    # ------------------------------------------------------------------ ingress

    @property
    def current_turn(self) -> int:
        return self.turn_state.turn

    def is_stale(self, turn: int) -> bool:
        return turn < self.turn_state.turn

    def ingest_audio(self, payload: AudioPayload, capture_at: Optional[int] = None) -> None:
        self._queue.put_nowait(("ingest_audio", payload, capture_at, self.clock.now_micros()))

    def ingest_text(self, text: str) -> None:
        self._queue.put_nowait(("ingest_text", text, self.clock.now_micros()))

    def ingest_end_utterance(self) -> None:
        self._queue.put_nowait(("ingest_end", self.clock.now_micros()))

    def interrupt(self) -> None:
        self._queue.put_nowait(("interrupt",))

    def dispatch(self, packet: DataPacket, origin: Optional[str] = None) -> None:
        """Route a packet from a stage (origin) or client ingress (None)."""
        self._queue.put_nowait(("emit", origin, packet))

    def is_quiescent(self) -> bool:
        if self._queue.qsize() > 0:
            return False
        return all(
            h.inbox_depth == 0 and not h.busy
            for h in self.stages.values()
            if h.state is StageState.RUNNING
        )

    async def wait_turn_end(self, timeout_s: float) -> bool:
        """Wait until the current turn returns to idle; True on the event."""
        try:
            await asyncio.wait_for(self._turn_done.wait(), timeout_s)
            return True
        except asyncio.TimeoutError:
            return False

    # ------------------------------------------------------------------ router

    def _start_router(self) -> None:
        self._router = asyncio.get_running_loop().create_task(
            self._route_loop(), name=f"router:{self.session.hex[:8]}"
        )

    async def _route_loop(self) -> None:
        while True:
            item = await self._queue.get()
            op = item[0]
            try:
                if op == "stop":
                    return
                if op == "emit":
                    await self._handle_packet(item[1], item[2])
                elif op == "ingest_audio":
                    await self._handle_ingest_audio(item[1], item[2], item[3])
                elif op == "ingest_text":
                    await self._handle_ingest_text(item[1], item[2])
                elif op == "ingest_end":
                    await self._handle_ingest_end(item[1])
                elif op == "interrupt":
                    await self._handle_interrupt()
            except Exception:  # noqa: BLE001 - the router must survive bad input
                logger.exception("router error on %s", op)

    def _make_packet(
        self,
        source: Source,
        turn: int,
        payload,
        created_at: int,
        capture_at: Optional[int] = None,
    ) -> DataPacket:
        return DataPacket(
            id=uuid.uuid4(),
            source=source,
            created_at=created_at,
            session=self.session,
            turn=turn,
            seq=self.counters.allocate(self.session, source, turn),
            payload=payload,
            capture_at=capture_at,
        )

    async def _handle_ingest_audio(
        self, payload: AudioPayload, capture_at: Optional[int], recv_at: int
    ) -> None:
        targets = [
            sid
            for sid in self.plan.config.sources
            if PayloadKind.AUDIO in self.plan.descriptors[sid].accepts
        ]
        if not targets:
            self._warn_capability(PayloadKind.AUDIO)
            return
        packet = self._make_packet(
            _MIC_SOURCE, self.current_turn, payload, recv_at, capture_at
        )
        await self._route(None, packet, targets)

    async def _handle_ingest_text(self, text: str, recv_at: int) -> None:
        targets = [
            sid
            for sid in self.plan.config.sources
            if PayloadKind.TEXT in self.plan.descriptors[sid].accepts
        ]
        if not targets:
            self._warn_capability(PayloadKind.TEXT)
            return
        # A text message is an instantaneous utterance: endpoint at receipt.
        # Mid-turn text still flows (pipelines without turn-closing stages,
        # like a bare echo, never leave processing) but cannot restart the
        # turn machine.
        if self.turn_state.state is TurnPhase.IDLE:
            self._advance(TurnEvent.UTTERANCE_START)
            self._advance(TurnEvent.UTTERANCE_END)
            self.metrics.record(
                Mark(self.session, self.current_turn, MarkKind.EOS, recv_at)
            )
        else:
            self.warn_count += 1
        packet = self._make_packet(
            _TEXT_SOURCE,
            self.current_turn,
            TextPayload(text=text, role=TextRole.USER, finality=TextFinality.FINAL),
            recv_at,
        )
        self._record_media_marks(packet)
        await self._route(None, packet, targets)

    async def _handle_ingest_end(self, recv_at: int) -> None:
        # Push-to-talk clients never send a start; an end while idle implies
        # the utterance that just finished streaming.
        if self.turn_state.state is TurnPhase.IDLE:
            self._advance(TurnEvent.UTTERANCE_START)
        packet = self._make_packet(
            _CONTROL_SOURCE,
            self.current_turn,
            ControlPayload(signal=ControlSignal.UTTERANCE_END, at_micros=recv_at),
            recv_at,
        )
        await self._handle_packet(None, packet)

    async def _handle_interrupt(self) -> None:
        if self.turn_state.state is TurnPhase.IDLE and self.is_quiescent():
            return  # nothing to cancel
        old_turn = self.current_turn
        now = self.clock.now_micros()
        self.metrics.record(Mark(self.session, old_turn, MarkKind.INTERRUPT, now))
        self._advance(TurnEvent.INTERRUPT)
        # Flush-cancel control window: stages clear per-turn buffers.
        cancel = self._make_packet(
            _CONTROL_SOURCE, old_turn, ControlPayload(signal=ControlSignal.INTERRUPT), now
        )
        window = window_of([cancel])
        for handle in self.stages.values():
            handle.try_submit_control(window)
        self._notify_turn_end(old_turn, interrupted=True)

    def _warn_capability(self, kind: PayloadKind) -> None:
        if kind in self._capability_warned:
            return
        self._capability_warned.add(kind)
        self.notify(
            "error",
            {"code": "capability", "message": f"no source stage accepts {kind.value}"},
        )

    def _advance(self, event: TurnEvent) -> bool:
        before = self.turn_state
        self.turn_state, legal = advance_turn(before, event)
        if not legal:
            self.warn_count += 1
            logger.debug(
                "ignored turn event %s in state %s", event.value, before.state.value
            )
            return False
        if self.turn_state.turn != before.turn:
            self._drop_old_turn_state()
            self._turn_done.set()
            self._turn_done = asyncio.Event()
        return True

    def _drop_old_turn_state(self) -> None:
        turn = self.current_turn
        for key in [k for k in self._agg if k[1] < turn]:
            del self._agg[key]
        for key in [k for k in self._segmenters if k[1] < turn]:
            del self._segmenters[key]
        for key in [k for k in self._full_buffers if k[1] < turn]:
            del self._full_buffers[key]

    # ------------------------------------------------------------- packet flow

    async def _handle_packet(self, origin: Optional[str], packet: DataPacket) -> None:
        if origin is not None and self.is_stale(packet.turn):
            self.metrics.record_stale(self.session, packet.turn)
            return
        if packet.kind is PayloadKind.CONTROL:
            await self._handle_control(origin, packet)
            return
        self._record_media_marks(packet)
        if origin is not None and origin in self.sinks:
            self._forward_to_client(packet)
        if origin is not None:
            successors = list(self.plan.edge_map.get(origin, ()))
        else:
            successors = list(self.plan.config.sources)
        await self._route(origin, packet, successors)

    async def _route(
        self, origin: Optional[str], packet: DataPacket, targets: list[str]
    ) -> None:
        for succ in targets:
            desc = self.plan.descriptors[succ]
            if (
                packet.kind is not PayloadKind.CONTROL
                and packet.kind not in desc.accepts
            ):
                continue
            if desc.aggregate == "utterance" and packet.kind is PayloadKind.AUDIO:
                self._agg.setdefault((succ, packet.turn), []).append(packet)
                continue
            if packet.kind is PayloadKind.TEXT and packet.payload.finality is TextFinality.DELTA:
                await self._route_delta(succ, packet)
                continue
            await self._submit(succ, window_of([packet]))

    async def _route_delta(self, succ: str, packet: DataPacket) -> None:
        key = (succ, packet.turn)
        if self.plan.config.options.tts_handoff == TTS_HANDOFF_SENTENCE:
            seg = self._segmenters.setdefault(key, SentenceSegmenter())
            for chunk in seg.feed(packet.payload.text):
                await self._submit_chunk(succ, packet, chunk)
        else:
            self._full_buffers.setdefault(key, []).append(packet.payload.text)

    async def _flush_delta_stream(self, succ: str, packet: DataPacket) -> None:
        key = (succ, packet.turn)
        if self.plan.config.options.tts_handoff == TTS_HANDOFF_SENTENCE:
            seg = self._segmenters.pop(key, None)
            if seg is not None:
                for chunk in seg.finish():
                    await self._submit_chunk(succ, packet, chunk)
        else:
            parts = self._full_buffers.pop(key, None)
            if parts:
                await self._submit_chunk(succ, packet, "".join(parts))

    async def _submit_chunk(self, succ: str, around: DataPacket, chunk: str) -> None:
        if not chunk:
            return
        chunk_packet = self._make_packet(
            around.source,
            around.turn,
            TextPayload(text=chunk, role=TextRole.AGENT, finality=TextFinality.FINAL),
            self.clock.now_micros(),
        )
        await self._submit(succ, window_of([chunk_packet]))

    async def _handle_control(self, origin: Optional[str], packet: DataPacket) -> None:
        signal = packet.payload.signal
        at = packet.payload.at_micros
        turn = self.current_turn

        if signal is ControlSignal.UTTERANCE_START:
            self._advance(TurnEvent.UTTERANCE_START)
            await self._route_control_downstream(origin, packet)
            return

        if signal is ControlSignal.UTTERANCE_END:
            if not self._advance(TurnEvent.UTTERANCE_END):
                return  # jittery endpointing; ignore
            self.metrics.record(
                Mark(self.session, turn, MarkKind.EOS, at if at is not None else packet.created_at)
            )
            await self._flush_aggregates(turn)
            await self._route_control_downstream(origin, packet, skip_aggregates=True)
            return

        if signal is ControlSignal.FLUSH:
            self.metrics.record(
                Mark(self.session, packet.turn, MarkKind.LLM_DONE, packet.created_at)
            )
            if origin is not None and origin in self.sinks:
                self.notify("llm.done", {"turn": packet.turn})
            for succ in self.plan.edge_map.get(origin, ()) if origin else ():
                await self._flush_delta_stream(succ, packet)
                await self._submit(succ, window_of([packet]))
            return

        if signal is ControlSignal.TURN_END:
            ended = packet.turn
            if not self._advance(TurnEvent.TURN_END):
                return
            self.metrics.record(
                Mark(self.session, ended, MarkKind.TURN_END, packet.created_at)
            )
            self._notify_turn_end(ended, interrupted=False)
            return

        # Stray interrupt controls from stages are consumed.

    async def _route_control_downstream(
        self, origin: Optional[str], packet: DataPacket, skip_aggregates: bool = False
    ) -> None:
        targets = self.plan.edge_map.get(origin, ()) if origin is not None else ()
        for succ in targets:
            if skip_aggregates and self.plan.descriptors[succ].aggregate == "utterance":
                continue  # the endpoint control was consumed as the window delimiter
            await self._submit(succ, window_of([packet]))

    async def _flush_aggregates(self, turn: int) -> None:
        for (sid, agg_turn), packets in sorted(self._agg.items()):
            if agg_turn != turn or not packets:
                continue
            await self._submit(sid, window_of(packets))
        self._agg = {k: v for k, v in self._agg.items() if k[1] != turn}

    async def _submit(self, stage_id: str, window: DataWindow) -> None:
        handle = self.stages[stage_id]
        if handle.state is not StageState.RUNNING:
            self.dropped_to_failed += len(window.packets)
            if stage_id not in self._failed_notified:
                self._failed_notified.add(stage_id)
                cause = handle.failure
                self.notify(
                    "error",
                    {
                        "code": "stage_failed",
                        "message": f"stage {stage_id!r} is {handle.state.value}"
                        + (f": {cause}" if cause else ""),
                    },
                )
            return
        try:
            await handle.submit(window)
        except LifecycleError:
            self.dropped_to_failed += len(window.packets)

    def _record_media_marks(self, packet: DataPacket) -> None:
        if packet.kind is PayloadKind.TEXT:
            payload = packet.payload
            if payload.role is TextRole.USER and payload.finality is TextFinality.FINAL:
                self.metrics.record(
                    Mark(self.session, packet.turn, MarkKind.ASR_FINAL, packet.created_at)
                )
            elif payload.role is TextRole.AGENT and payload.finality is TextFinality.DELTA:
                self.metrics.record(
                    Mark(
                        self.session,
                        packet.turn,
                        MarkKind.LLM_FIRST_TOKEN,
                        packet.created_at,
                    )
                )

    def _forward_to_client(self, packet: DataPacket) -> None:
        if packet.kind is PayloadKind.AUDIO:
            if not self.metrics.has_mark(self.session, packet.turn, MarkKind.TTS_FIRST_AUDIO):
                self.metrics.record(
                    Mark(
                        self.session,
                        packet.turn,
                        MarkKind.TTS_FIRST_AUDIO,
                        self.clock.now_micros(),
                    )
                )
                self._advance(TurnEvent.AGENT_AUDIO)
                self.notify("turn.start", {"turn": packet.turn})
        self.deliver(packet)

    def _notify_turn_end(self, turn: int, interrupted: bool) -> None:
        report = None
        try:
            report = self.metrics.turn_report(self.session, turn)
        except Exception:  # noqa: BLE001 - no endpoint recorded
            pass
        self.notify("turn.end", {"turn": turn, "interrupted": interrupted, "report": report})

    # ------------------------------------------------------------------ lifecycle

    async def shutdown(self, deadline_ms: int = 5000) -> None:
        if self._router is not None:
            self._queue.put_nowait(("stop",))
            try:
                await asyncio.wait_for(self._router, deadline_ms / 1000.0)
            except asyncio.TimeoutError:
                self._router.cancel()
            self._router = None
        for sid in reversed(self.plan.topo_order):
            handle = self.stages.get(sid)
            if handle is not None:
                await handle.shutdown(deadline_ms)


async def build_pipeline(
    plan: ValidatedPlan,
    registry: dict[str, StageKindInfo],
    *,
    session: Optional[SessionId] = None,
    clock: Optional[SessionClock] = None,
    deliver: Callable[[DataPacket], None] = lambda packet: None,
    notify: Callable[[str, dict], None] = lambda kind, data: None,
    start_deadline_s: float = 10.0,
) -> Pipeline:
    """Spawn every stage of the plan; tears down on any spawn failure."""
    unknown = sorted(
        {d.kind for d in plan.config.stages if d.kind not in registry}
    )
    if unknown:
        raise ConfigError("unknown stage kind: " + ", ".join(unknown))
    session = session if session is not None else uuid.uuid4()
    clock = clock if clock is not None else SessionClock()
    pipeline = Pipeline(plan, session, clock, deliver, notify)

    for sid in plan.topo_order:
        desc = plan.descriptors[sid]
        stage = registry[desc.kind].factory()
        ctx = StageContext(
            descriptor=desc,
            session=session,
            clock=clock,
            counters=pipeline.counters,
            emit=lambda packet, _sid=sid: pipeline.dispatch(packet, _sid),
            report_error=lambda code, message: pipeline.notify(
                "error", {"code": code, "message": message}
            ),
            is_stale=pipeline.is_stale,
        )
        stage.ctx = ctx
        handle = await spawn_stage(desc, stage, ctx, start_deadline_s)
        if handle.state is not StageState.RUNNING:
            for done_id in reversed([s for s in plan.topo_order if s in pipeline.stages]):
                await pipeline.stages[done_id].shutdown()
            raise StageSpawnError(
                f"stage {sid!r} failed to start: {handle.failure}"
            ) from handle.failure
        pipeline.stages[sid] = handle
    pipeline._start_router()
    return pipeline
