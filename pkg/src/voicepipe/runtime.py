"""Stage hosting: one worker per stage, queue-mediated I/O, serial callbacks.

A stage worker owns a bounded inbox and invokes the stage's callbacks one
at a time; emissions for one window complete before the next window is
processed. Workers never share mutable state and talk to the rest of the
pipeline only through the inbox and the dispatch sink.
"""
from __future__ import annotations

import asyncio
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .errors import ConfigError, LifecycleError, RoutingError
from .packets import (
    AudioPayload,
    ControlPayload,
    ControlSignal,
    DataPacket,
    DataWindow,
    Payload,
    PayloadKind,
    SequenceCounters,
    SessionClock,
    SessionId,
    Source,
    SourceKind,
    TextFinality,
    TextPayload,
    TextRole,
    new_packet,
)

logger = logging.getLogger(__name__)

STAGE_ID_RE = re.compile(r"^[a-z0-9_-]{1,32}$")
DEFAULT_QUEUE_CAPACITY = 64
DEFAULT_START_DEADLINE_S = 10.0
DEFAULT_SHUTDOWN_DEADLINE_MS = 5000


class StageState(Enum):
    STARTING = "starting"
    RUNNING = "running"
    DRAINING = "draining"
    STOPPED = "stopped"
    FAILED = "failed"


class BackpressurePolicy(str, Enum):
    BLOCK = "block"
    DROP_OLDEST = "drop_oldest"


class SubmitResult(Enum):
    ACCEPTED = "accepted"
    BACKPRESSURED = "backpressured"


class ShutdownResult(Enum):
    STOPPED = "stopped"
    KILLED = "killed"


@dataclass(frozen=True)
class StageDescriptor:
    """Declaration of what a stage consumes and produces."""

    id: str
    kind: str
    accepts: frozenset[PayloadKind]
    emits: frozenset[PayloadKind]
    params: dict = field(default_factory=dict)
    queue_capacity: int = DEFAULT_QUEUE_CAPACITY
    backpressure: Optional[BackpressurePolicy] = None
    aggregate: Optional[str] = None  # "utterance" batches one turn's audio

    def validate(self) -> list[str]:
        problems = []
        if not STAGE_ID_RE.match(self.id or ""):
            problems.append(f"stage id {self.id!r} must match [a-z0-9_-]{{1,32}}")
        if not self.accepts:
            problems.append(f"stage {self.id!r}: accepts must be non-empty")
        if not self.emits:
            problems.append(f"stage {self.id!r}: emits must be non-empty")
        if self.queue_capacity < 1:
            problems.append(f"stage {self.id!r}: queue_capacity must be positive")
        if self.aggregate not in (None, "utterance"):
            problems.append(f"stage {self.id!r}: unknown aggregate {self.aggregate!r}")
        return problems

    @property
    def effective_backpressure(self) -> BackpressurePolicy:
        if self.backpressure is not None:
            return self.backpressure
        # Stale live audio is worse than lost audio; lost text corrupts dialogue.
        if PayloadKind.AUDIO in self.accepts:
            return BackpressurePolicy.DROP_OLDEST
        return BackpressurePolicy.BLOCK


class StageContext:
    """Per-stage facilities: packet construction, emission, error reporting."""

    def __init__(
        self,
        descriptor: StageDescriptor,
        session: SessionId,
        clock: SessionClock,
        counters: SequenceCounters,
        emit: Callable[[DataPacket], None],
        report_error: Callable[[str, str], None],
        is_stale: Callable[[int], bool],
    ):
        self.descriptor = descriptor
        self.session = session
        self.clock = clock
        self.counters = counters
        self._emit = emit
        self.report_error = report_error
        self.is_stale = is_stale
        self.source = Source(SourceKind.STAGE, descriptor.id)

    def packet(self, turn: int, payload: Payload, capture_at: int | None = None) -> DataPacket:
        return new_packet(
            self.source, self.session, turn, payload, self.clock, self.counters, capture_at
        )

    def text(self, turn: int, text: str, role: TextRole, finality: TextFinality) -> DataPacket:
        return self.packet(turn, TextPayload(text=text, role=role, finality=finality))

    def audio(self, turn: int, payload: AudioPayload) -> DataPacket:
        return self.packet(turn, payload)

    def control(self, turn: int, signal: ControlSignal, at_micros: int | None = None) -> DataPacket:
        return self.packet(turn, ControlPayload(signal=signal, at_micros=at_micros))

    def emit(self, packet: DataPacket) -> None:
        self._emit(packet)


class Stage:
    """Behavior contract a stage implementation supplies.

    Callbacks run serially on the stage's worker; on_window emissions for
    one window complete before the next on_window call.
    """

    ctx: StageContext

    async def on_start(self, params: dict) -> None:
        pass

    async def on_window(self, window: DataWindow, emit: Callable[[DataPacket], None]) -> None:
        pass

    async def on_flush(self, emit: Callable[[DataPacket], None]) -> None:
        pass

    async def on_stop(self) -> None:
        pass


class _FlushRequest:
    def __init__(self):
        self.future: asyncio.Future = asyncio.get_running_loop().create_future()


class _StopRequest:
    pass


class StageHandle:
    """Live handle to a hosted stage worker."""

    def __init__(self, descriptor: StageDescriptor, stage: Stage, ctx: StageContext):
        self.descriptor = descriptor
        self.stage = stage
        self.ctx = ctx
        self.state = StageState.STARTING
        self.failure: Optional[BaseException] = None
        self.evicted = 0
        self.busy = False
        self._queue: asyncio.Queue = asyncio.Queue(maxsize=descriptor.queue_capacity)
        self._task: Optional[asyncio.Task] = None
        self._flush_capture: Optional[list[DataPacket]] = None

    @property
    def inbox_depth(self) -> int:
        return self._queue.qsize()

    def _emit_hook(self, packet: DataPacket) -> None:
        if self._flush_capture is not None:
            self._flush_capture.append(packet)
        self.ctx.emit(packet)

    async def submit(self, window: DataWindow) -> SubmitResult:
        if self.state is not StageState.RUNNING:
            raise LifecycleError(
                f"submit to stage {self.descriptor.id!r} in state {self.state.value}"
            )
        bad = window.kinds - self.descriptor.accepts - {PayloadKind.CONTROL}
        if bad:
            raise RoutingError(
                f"stage {self.descriptor.id!r} does not accept "
                f"{sorted(k.value for k in bad)}"
            )
        policy = self.descriptor.effective_backpressure
        if self._queue.full():
            if policy is BackpressurePolicy.DROP_OLDEST:
                try:
                    self._queue.get_nowait()
                    self.evicted += 1
                except asyncio.QueueEmpty:  # pragma: no cover - single-threaded
                    pass
                self._queue.put_nowait(window)
                return SubmitResult.ACCEPTED
            await self._queue.put(window)
            return SubmitResult.BACKPRESSURED
        self._queue.put_nowait(window)
        return SubmitResult.ACCEPTED

    def try_submit_control(self, window: DataWindow) -> bool:
        """Best-effort control delivery that never blocks the router."""
        if self.state is not StageState.RUNNING or self._queue.full():
            return False
        self._queue.put_nowait(window)
        return True

    async def flush(self) -> list[DataPacket]:
        if self.state not in (StageState.RUNNING, StageState.DRAINING):
            raise LifecycleError(
                f"flush of stage {self.descriptor.id!r} in state {self.state.value}"
            )
        req = _FlushRequest()
        await self._queue.put(req)
        return await req.future

    async def shutdown(self, deadline_ms: int = DEFAULT_SHUTDOWN_DEADLINE_MS) -> ShutdownResult:
        if self.state in (StageState.STOPPED, StageState.FAILED):
            return ShutdownResult.STOPPED
        self.state = StageState.DRAINING

        async def drain() -> None:
            # The stop sentinel may itself have to wait for queue space.
            await self._queue.put(_StopRequest())
            await asyncio.shield(self._task)

        try:
            await asyncio.wait_for(drain(), deadline_ms / 1000.0)
        except asyncio.TimeoutError:
            self._task.cancel()
            try:
                await self._task
            except (asyncio.CancelledError, Exception):  # noqa: BLE001
                pass
            self.state = StageState.STOPPED
            return ShutdownResult.KILLED
        except Exception:  # noqa: BLE001 - stage died while draining; still stopped
            pass
        self.state = StageState.STOPPED
        return ShutdownResult.STOPPED

    async def _run(self) -> None:
        while True:
            item = await self._queue.get()
            if isinstance(item, _StopRequest):
                await self.stage.on_stop()
                return
            if isinstance(item, _FlushRequest):
                self._flush_capture = []
                try:
                    self.busy = True
                    await self.stage.on_flush(self._emit_hook)
                    item.future.set_result(self._flush_capture)
                except Exception as exc:  # noqa: BLE001
                    item.future.set_exception(exc)
                    raise
                finally:
                    self.busy = False
                    self._flush_capture = None
                continue
            self.busy = True
            try:
                await self.stage.on_window(item, self._emit_hook)
            finally:
                self.busy = False

    def _on_task_done(self, task: asyncio.Task) -> None:
        if task.cancelled():
            return
        exc = task.exception()
        if exc is not None:
            self.failure = exc
            self.state = StageState.FAILED
            logger.error("stage %s failed: %s", self.descriptor.id, exc)
            self._drain_pending(exc)

    def _drain_pending(self, exc: BaseException) -> None:
        while True:
            try:
                item = self._queue.get_nowait()
            except asyncio.QueueEmpty:
                return
            if isinstance(item, _FlushRequest) and not item.future.done():
                item.future.set_exception(LifecycleError(str(exc)))


async def spawn_stage(
    descriptor: StageDescriptor,
    stage: Stage,
    ctx: StageContext,
    start_deadline_s: float = DEFAULT_START_DEADLINE_S,
) -> StageHandle:
    """Host a stage on its own worker; returns a FAILED handle on start error."""
    problems = descriptor.validate()
    if problems:
        raise ConfigError("; ".join(problems))
    handle = StageHandle(descriptor, stage, ctx)
    stage.ctx = ctx
    try:
        await asyncio.wait_for(stage.on_start(descriptor.params), start_deadline_s)
    except Exception as exc:  # noqa: BLE001 - deadline or stage failure
        handle.failure = exc
        handle.state = StageState.FAILED
        return handle
    handle.state = StageState.RUNNING
    handle._task = asyncio.get_running_loop().create_task(
        handle._run(), name=f"stage:{descriptor.id}"
    )
    handle._task.add_done_callback(handle._on_task_done)
    return handle
