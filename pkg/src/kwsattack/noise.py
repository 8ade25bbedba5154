"""Perturbation size metrics computed on integer sample deltas."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .audio_io import AudioClip
from .errors import LengthMismatch


@dataclass(frozen=True)
class NoiseReport:
    changed_sample_count: int
    changed_fraction: float
    max_abs_delta: int
    rms_delta: float
    snr_db: float  # +inf when nothing changed

    def as_dict(self) -> dict:
        return asdict(self)


def noise_metrics(original: AudioClip, adversarial: AudioClip) -> NoiseReport:
    a = np.asarray(original.samples, dtype=np.int64)
    b = np.asarray(adversarial.samples, dtype=np.int64)
    if a.shape != b.shape:
        raise LengthMismatch(f"clip lengths differ: {a.size} vs {b.size}")
    delta = b - a
    changed = int(np.count_nonzero(delta))
    noise_power = float(np.mean(delta.astype(np.float64) ** 2)) if a.size else 0.0
    signal_power = float(np.mean(a.astype(np.float64) ** 2)) if a.size else 0.0
    if noise_power == 0.0:
        snr = math.inf
    elif signal_power == 0.0:
        snr = -math.inf
    else:
        snr = 10.0 * math.log10(signal_power / noise_power)
    return NoiseReport(
        changed_sample_count=changed,
        changed_fraction=changed / a.size if a.size else 0.0,
        max_abs_delta=int(np.max(np.abs(delta))) if a.size else 0,
        rms_delta=math.sqrt(noise_power),
        snr_db=snr,
    )


def lsb_violations(original: AudioClip, adversarial: AudioClip) -> int:
    """Number of samples whose high byte differs from the original's."""
    a = np.asarray(original.samples, dtype=np.int32) >> 8
    b = np.asarray(adversarial.samples, dtype=np.int32) >> 8
    if a.shape != b.shape:
        raise LengthMismatch(f"clip lengths differ: {a.size} vs {b.size}")
    return int(np.count_nonzero(a != b))
