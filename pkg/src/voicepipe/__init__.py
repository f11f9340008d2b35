"""voicepipe: a real-time, low-latency conversational agent pipeline server.

Composes pluggable stages (endpointing, speech recognition, language
generation, speech synthesis) into a per-session dataflow pipeline,
streams results to clients over a socket protocol, and instruments
end-of-user-speech to first-agent-audio latency.
"""

__version__ = "0.1.0"

from .packets import (  # noqa: F401
    AudioPayload,
    ControlPayload,
    ControlSignal,
    DataPacket,
    DataWindow,
    PayloadKind,
    SessionClock,
    Source,
    SourceKind,
    TextFinality,
    TextPayload,
    TextRole,
    VisionPayload,
    new_packet,
    window_append,
    window_of,
)
from .pipeline import (  # noqa: F401
    Pipeline,
    PipelineConfig,
    PipelineOptions,
    TurnState,
    ValidatedPlan,
    advance_turn,
    build_pipeline,
    validate_config,
)
from .runtime import (  # noqa: F401
    BackpressurePolicy,
    Stage,
    StageDescriptor,
    StageHandle,
    StageState,
    spawn_stage,
)
