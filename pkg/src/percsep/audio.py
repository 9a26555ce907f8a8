"""Mono audio container and WAV I/O."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"expected mono samples, got shape {samples.shape}")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain NaN or Inf")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def slice(self, start: float, end: float) -> "AudioBuffer":
        """Sub-buffer for the half-open time range [start, end)."""
        i0 = int(round(start * self.sample_rate))
        i1 = int(round(end * self.sample_rate))
        return AudioBuffer(self.samples[max(i0, 0):max(i1, 0)], self.sample_rate)


def read_wav(path: str | Path) -> AudioBuffer:
    """Read a mono WAV file (PCM 16-bit or float32) into a float64 buffer."""
    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, found {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    return AudioBuffer(samples, rate)


def write_wav(path: str | Path, audio: AudioBuffer, fmt: str = "float32") -> None:
    """Write ``audio`` as PCM16 (``fmt="pcm16"``) or IEEE float32."""
    if fmt == "pcm16":
        data = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype(np.int16)
    elif fmt == "float32":
        data = audio.samples.astype(np.float32)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    wavfile.write(str(path), audio.sample_rate, data)
