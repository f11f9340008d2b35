"""Stage-kind registry: plug new stage implementations in by name."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from ..packets import PayloadKind
from ..runtime import Stage
from .http import HttpAsrStage, HttpLlmStage, HttpTtsStage
from .mocks import EchoStage, MockAsrStage, MockTtsStage, ScriptedLlmStage
from .vad import VadStage

AUDIO = PayloadKind.AUDIO
TEXT = PayloadKind.TEXT
CONTROL = PayloadKind.CONTROL


@dataclass(frozen=True)
class StageKindInfo:
    factory: Callable[[], Stage]
    default_accepts: frozenset[PayloadKind]
    default_emits: frozenset[PayloadKind]
    deterministic: bool  # safe for reproducible benchmarks


_BUILTINS: dict[str, StageKindInfo] = {
    "vad": StageKindInfo(VadStage, frozenset({AUDIO}), frozenset({AUDIO, CONTROL}), True),
    "mock_asr": StageKindInfo(MockAsrStage, frozenset({AUDIO}), frozenset({TEXT}), True),
    "scripted_llm": StageKindInfo(
        ScriptedLlmStage, frozenset({TEXT}), frozenset({TEXT, CONTROL}), True
    ),
    "mock_tts": StageKindInfo(
        MockTtsStage, frozenset({TEXT}), frozenset({AUDIO, CONTROL}), True
    ),
    "echo": StageKindInfo(
        EchoStage, frozenset({AUDIO, TEXT}), frozenset({AUDIO, TEXT}), True
    ),
    "http_asr": StageKindInfo(HttpAsrStage, frozenset({AUDIO}), frozenset({TEXT}), False),
    "http_llm": StageKindInfo(
        HttpLlmStage, frozenset({TEXT}), frozenset({TEXT, CONTROL}), False
    ),
    "http_tts": StageKindInfo(
        HttpTtsStage, frozenset({TEXT}), frozenset({AUDIO, CONTROL}), False
    ),
}

DEFAULT_ACCEPTS = {kind: info.default_accepts for kind, info in _BUILTINS.items()}
DEFAULT_EMITS = {kind: info.default_emits for kind, info in _BUILTINS.items()}


def default_registry() -> dict[str, StageKindInfo]:
    return dict(_BUILTINS)


def register_stage(
    registry: dict[str, StageKindInfo],
    kind: str,
    factory: Callable[[], Stage],
    accepts: frozenset[PayloadKind],
    emits: frozenset[PayloadKind],
    deterministic: bool = False,
) -> None:
    registry[kind] = StageKindInfo(factory, accepts, emits, deterministic)
