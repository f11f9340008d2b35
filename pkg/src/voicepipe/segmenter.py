"""Incremental sentence segmentation for streaming text.

Splits a delta stream into sentence-sized chunks so synthesis can start
before generation finishes. A boundary falls after the last character of
a maximal run of ``.``, ``!``, ``?`` once the following character is
whitespace (or the stream ends). Chunks are trimmed of leading whitespace;
chunks shorter than two non-whitespace characters are held and merged into
the next chunk. Joining the emitted chunks with a single space restored at
each boundary where the original had whitespace reproduces the input.
"""
from __future__ import annotations

from typing import Iterable, Iterator

TERMINATORS = ".!?"
MIN_CHUNK_CHARS = 2


def _nonspace_len(text: str) -> int:
    return sum(1 for c in text if not c.isspace())


class SentenceSegmenter:
    """Stateful splitter; one instance per delta stream."""

    def __init__(self):
        self._buf = ""
        self._scan_from = 0  # boundaries before this offset were rejected as too short

    def feed(self, delta: str) -> list[str]:
        """Consume one delta, returning any newly completed chunks."""
        self._buf += delta
        out: list[str] = []
        while True:
            cut = self._find_boundary()
            if cut is None:
                # A position's verdict is final once its follower exists;
                # resume scanning at the last unconfirmed character.
                self._scan_from = max(self._scan_from, len(self._buf) - 1)
                break
            candidate = self._buf[:cut].lstrip()
            if _nonspace_len(candidate) < MIN_CHUNK_CHARS:
                # Too short to stand alone; merge into the next chunk.
                self._scan_from = cut
                continue
            out.append(candidate)
            self._buf = self._buf[cut:]
            self._scan_from = 0
        return out

    def finish(self) -> list[str]:
        """End of stream: emit any non-empty remainder."""
        remainder = self._buf.lstrip()
        self._buf = ""
        self._scan_from = 0
        return [remainder] if remainder else []

    def _find_boundary(self) -> int | None:
        buf = self._buf
        i = self._scan_from
        while i < len(buf) - 1:  # need the following character to confirm
            if buf[i] in TERMINATORS and buf[i + 1] not in TERMINATORS:
                if buf[i + 1].isspace():
                    return i + 1
            i += 1
        return None


def segment_sentences(deltas: Iterable[str]) -> Iterator[str]:
    """Segment a finite delta stream; yields chunks in order."""
    seg = SentenceSegmenter()
    for delta in deltas:
        yield from seg.feed(delta)
    yield from seg.finish()
