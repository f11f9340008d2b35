"""Built-in stage implementations and the stage-kind registry."""
from __future__ import annotations

from .registry import (  # noqa: F401
    DEFAULT_ACCEPTS,
    DEFAULT_EMITS,
    StageKindInfo,
    default_registry,
    register_stage,
)
