"""
PCM16 mono WAV reading and writing.

Only the canonical format is accepted: RIFF/WAVE, PCM (format code 1),
one channel, 16 bits per sample, 16 kHz. Unknown chunks (LIST, fact, ...)
are skipped. Nothing is resampled or rescaled.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import NotWav, UnsupportedFormat

SAMPLE_RATE = 16000
CLIP_SAMPLES = SAMPLE_RATE  # one second

PathLike = Union[str, Path]


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Immutable mono PCM16 clip.

    ``samples`` is stored as a read-only int16 array so a clip can be shared
    between threads and attack populations without defensive copies.
    """

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    label: Optional[str] = None

    def __post_init__(self):
        arr = np.asarray(self.samples)
        if arr.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if arr.dtype != np.int16:
            if arr.size and (arr.min() < -32768 or arr.max() > 32767):
                raise ValueError("sample values outside the int16 range")
            arr = arr.astype(np.int16)
        else:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self):
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, AudioClip):
            return NotImplemented
        return (self.sample_rate == other.sample_rate
                and self.label == other.label
                and np.array_equal(self.samples, other.samples))

    def with_samples(self, samples) -> "AudioClip":
        return AudioClip(samples, self.sample_rate, self.label)


def _wav_bytes(samples: np.ndarray, sample_rate: int) -> bytes:
    data = samples.astype("<i2").tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(data), b"WAVE",
        b"fmt ", 16, 1, 1, sample_rate, sample_rate * 2, 2, 16,
        b"data", len(data),
    )
    return header + data


def write_wav(clip: AudioClip, path: PathLike) -> None:
    """Write ``clip`` as a canonical 44-byte-header WAV file."""
    Path(path).write_bytes(_wav_bytes(clip.samples, int(clip.sample_rate)))


def parse_wav(buf: bytes, label: Optional[str] = None) -> AudioClip:
    if len(buf) < 12 or buf[0:4] != b"RIFF" or buf[8:12] != b"WAVE":
        raise NotWav("missing RIFF/WAVE magic")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(buf):
        chunk_id, size = struct.unpack_from("<4sI", buf, pos)
        body = buf[pos + 8:pos + 8 + size]
        if chunk_id == b"fmt ":
            if size < 16:
                raise UnsupportedFormat("fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            data = body
            if fmt is not None:
                break
        # chunks are word aligned
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise UnsupportedFormat("fmt chunk missing")
    if data is None:
        raise UnsupportedFormat("data chunk missing")
    format_code, channels, rate, _, _, bits = fmt
    if format_code != 1:
        raise UnsupportedFormat(f"format code {format_code}: only PCM (1) is supported")
    if channels != 1:
        raise UnsupportedFormat(f"channels={channels}: only mono is supported")
    if bits != 16:
        raise UnsupportedFormat(f"bits_per_sample={bits}: only 16-bit is supported")
    if rate != SAMPLE_RATE:
        raise UnsupportedFormat(f"sample_rate={rate}: only {SAMPLE_RATE} Hz is supported")
    if len(data) % 2:
        data = data[:-1]
    samples = np.frombuffer(data, dtype="<i2").astype(np.int16)
    return AudioClip(samples, rate, label)


def read_wav(path: PathLike, label: Optional[str] = None) -> AudioClip:
    return parse_wav(Path(path).read_bytes(), label)


def pad_or_trim(clip: AudioClip, target_samples: int = CLIP_SAMPLES) -> AudioClip:
    """Zero-pad or truncate at the tail so the clip has ``target_samples``."""
    if target_samples <= 0:
        raise ValueError("target_samples must be positive")
    n = len(clip)
    if n == target_samples:
        return clip
    if n > target_samples:
        return clip.with_samples(clip.samples[:target_samples])
    out = np.zeros(target_samples, dtype=np.int16)
    out[:n] = clip.samples
    return clip.with_samples(out)
