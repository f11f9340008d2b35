"""Exception types shared across the framework."""
from __future__ import annotations


class VoicepipeError(Exception):
    """Base class for all framework errors."""


class PayloadError(VoicepipeError):
    """A payload violates a construction invariant."""


class WindowError(VoicepipeError):
    """A window operation mixed sessions or turns."""


class ParameterError(VoicepipeError):
    """An operation parameter is outside its documented range."""


class DecodeError(VoicepipeError):
    """Wire bytes could not be decoded; carries the failing byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.reason = message
        self.offset = offset


class ConfigError(VoicepipeError):
    """Invalid stage or pipeline configuration."""


class ValidationError(ConfigError):
    """Pipeline graph validation failed; lists every violation found."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


class RoutingError(VoicepipeError):
    """A window carried packet kinds the target stage does not accept."""


class LifecycleError(VoicepipeError):
    """Operation called on a stage in an incompatible lifecycle state."""


class StageSpawnError(VoicepipeError):
    """A stage failed to start."""


class MetricsError(VoicepipeError):
    """A latency report was requested for data that does not support it."""
