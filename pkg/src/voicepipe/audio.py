"""PCM16 helpers: level math, synthesis, WAV I/O, resampling."""
from __future__ import annotations

import io
import math
import wave

import numpy as np

from .errors import ParameterError
from .packets import PIPELINE_SAMPLE_RATE

INT16_FULL_SCALE = 32768.0


def pcm_to_float(samples: bytes) -> np.ndarray:
    """Normalize PCM16LE bytes to float64 in [-1, 1)."""
    return np.frombuffer(samples, dtype="<i2").astype(np.float64) / INT16_FULL_SCALE


def rms_dbfs(samples: bytes) -> float:
    """Frame level in dBFS over normalized samples; -inf for silence."""
    x = pcm_to_float(samples)
    if x.size == 0:
        return -math.inf
    rms = math.sqrt(float(np.mean(x * x)))
    if rms == 0.0:
        return -math.inf
    return 20.0 * math.log10(rms)


def sine_pcm(
    n_samples: int,
    freq_hz: float = 440.0,
    amplitude: float = 0.5,
    sample_rate_hz: int = PIPELINE_SAMPLE_RATE,
    phase_offset: int = 0,
) -> bytes:
    """Deterministic sine tone; identical arguments yield identical bytes."""
    i = np.arange(phase_offset, phase_offset + n_samples, dtype=np.float64)
    wave_f = amplitude * np.sin(2.0 * np.pi * freq_hz * i / sample_rate_hz)
    return (np.round(wave_f * 32767.0)).astype("<i2").tobytes()


def silence_pcm(n_samples: int) -> bytes:
    return bytes(2 * n_samples)


def resample_linear(samples: bytes, from_rate: int, to_rate: int) -> bytes:
    """Linear resampling of PCM16LE mono; identity when rates match."""
    if from_rate <= 0 or to_rate <= 0:
        raise ParameterError("sample rates must be positive")
    if from_rate == to_rate:
        return samples
    x = np.frombuffer(samples, dtype="<i2").astype(np.float64)
    if x.size == 0:
        return b""
    n_out = max(1, int(round(x.size * to_rate / from_rate)))
    src_pos = np.arange(x.size, dtype=np.float64)
    dst_pos = np.arange(n_out, dtype=np.float64) * (x.size - 1) / max(1, n_out - 1)
    y = np.interp(dst_pos, src_pos, x)
    return np.clip(np.round(y), -32768, 32767).astype("<i2").tobytes()


def downmix_to_mono(samples: bytes, channels: int) -> bytes:
    """Average interleaved channels down to mono."""
    if channels == 1:
        return samples
    x = np.frombuffer(samples, dtype="<i2").astype(np.float64)
    usable = x.size - (x.size % channels)
    x = x[:usable].reshape(-1, channels)
    mono = np.round(x.mean(axis=1))
    return np.clip(mono, -32768, 32767).astype("<i2").tobytes()


def read_wav(path: str) -> tuple[int, int, bytes]:
    """Read a RIFF/PCM16LE file; returns (rate, channels, frames)."""
    with wave.open(path, "rb") as wf:
        if wf.getsampwidth() != 2:
            raise ParameterError("input WAV must be 16-bit PCM")
        return wf.getframerate(), wf.getnchannels(), wf.readframes(wf.getnframes())


def write_wav(path: str, samples: bytes, sample_rate_hz: int = PIPELINE_SAMPLE_RATE):
    with wave.open(path, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate_hz)
        wf.writeframes(samples)


def wav_bytes(samples: bytes, sample_rate_hz: int = PIPELINE_SAMPLE_RATE) -> bytes:
    """RIFF/PCM16LE/mono encoding in memory (adapter upload format)."""
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate_hz)
        wf.writeframes(samples)
    return buf.getvalue()
