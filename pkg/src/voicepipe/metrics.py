"""Per-turn timing marks and the end-of-speech → first-audio figure.

All marks use the server's monotonic session clock. "First audio" means
the first agent audio frame queued to the client connection — the server
cannot observe sound leaving the client's speaker.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .errors import MetricsError
from .packets import SessionId


class MarkKind(Enum):
    EOS = "eos"
    ASR_FINAL = "asr_final"
    LLM_FIRST_TOKEN = "llm_first_token"
    LLM_DONE = "llm_done"
    TTS_FIRST_AUDIO = "tts_first_audio"
    TURN_END = "turn_end"
    INTERRUPT = "interrupt"


@dataclass(frozen=True, slots=True)
class Mark:
    session: SessionId
    turn: int
    kind: MarkKind
    at: int  # microseconds since session epoch
    stage_id: Optional[str] = None


@dataclass(frozen=True)
class LatencyReport:
    session: SessionId
    turn: int
    complete: bool
    interrupted: bool
    eos_to_first_audio_ms: Optional[int]
    marks: dict  # MarkKind -> micros
    stale_packets: int = 0


class MetricsStore:
    """Mark storage; first mark per (session, turn, kind) wins."""

    def __init__(self):
        self._marks: dict[tuple[SessionId, int], dict[MarkKind, int]] = {}
        self._interrupted: set[tuple[SessionId, int]] = set()
        self._stale: dict[tuple[SessionId, int], int] = {}
        self.duplicates = 0

    def record(self, mark: Mark) -> None:
        key = (mark.session, mark.turn)
        if mark.kind is MarkKind.INTERRUPT:
            self._interrupted.add(key)
            self._marks.setdefault(key, {}).setdefault(mark.kind, mark.at)
            return
        turn_marks = self._marks.setdefault(key, {})
        if mark.kind in turn_marks:
            self.duplicates += 1
            return
        turn_marks[mark.kind] = mark.at

    def record_stale(self, session: SessionId, turn: int, count: int = 1) -> None:
        key = (session, turn)
        self._stale[key] = self._stale.get(key, 0) + count

    def has_mark(self, session: SessionId, turn: int, kind: MarkKind) -> bool:
        return kind in self._marks.get((session, turn), {})

    def turns(self, session: SessionId) -> list[int]:
        return sorted(t for (s, t) in self._marks if s == session)

    def turn_report(self, session: SessionId, turn: int) -> LatencyReport:
        key = (session, turn)
        marks = self._marks.get(key, {})
        if MarkKind.EOS not in marks:
            raise MetricsError(f"no endpoint recorded for turn {turn}")
        interrupted = key in self._interrupted
        complete = MarkKind.TTS_FIRST_AUDIO in marks and not interrupted
        latency_ms = None
        if complete:
            latency_ms = (marks[MarkKind.TTS_FIRST_AUDIO] - marks[MarkKind.EOS]) // 1000
        return LatencyReport(
            session=session,
            turn=turn,
            complete=complete,
            interrupted=interrupted,
            eos_to_first_audio_ms=latency_ms,
            marks=dict(marks),
            stale_packets=self._stale.get(key, 0),
        )

    def summarize(self, session: SessionId, last_n_turns: Optional[int] = None) -> dict:
        """Nearest-rank percentiles over complete turns only."""
        turns = self.turns(session)
        if last_n_turns is not None:
            turns = turns[-last_n_turns:]
        values = []
        for turn in turns:
            try:
                report = self.turn_report(session, turn)
            except MetricsError:
                continue
            if report.complete:
                values.append(report.eos_to_first_audio_ms)
        if not values:
            raise MetricsError("no complete turns to summarize")
        values.sort()
        return {
            "n": len(values),
            "p50": _nearest_rank(values, 50),
            "p95": _nearest_rank(values, 95),
            "mean": sum(values) / len(values),
        }


def _nearest_rank(sorted_values: list[int], percentile: float) -> int:
    rank = max(1, math.ceil(percentile / 100.0 * len(sorted_values)))
    return sorted_values[rank - 1]
