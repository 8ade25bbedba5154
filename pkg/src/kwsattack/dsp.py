"""
MFCC front-end.

Pipeline per frame: Hann window -> zero-pad to ``fft_size`` -> |rfft|^2 ->
triangular mel filterbank -> log(energy + log_floor) -> orthonormal DCT-II ->
first ``num_cepstra`` coefficients. No pre-emphasis, liftering or deltas.

Power spectrum convention: ``P[k] = |sum_n w[n] x[n] exp(-2j pi k n / N)|^2``
for ``k = 0 .. N/2`` with ``N = fft_size`` and no 1/N scaling. Parseval then
reads ``sum_n (w x)^2 == (P[0] + P[N/2] + 2 * sum(P[1:N/2])) / N``.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Union

import numpy as np

from .audio_io import SAMPLE_RATE, AudioClip
from .errors import ClipTooShort, DegenerateFilter, InvalidConfig

FULL_SCALE = 32768.0


@dataclass(frozen=True)
class DspConfig:
    frame_length: int = 480
    hop_length: int = 160
    fft_size: int = 512
    num_mel_filters: int = 40
    num_cepstra: int = 10
    fmin: float = 20.0
    fmax: float = 7600.0
    log_floor: float = 1e-6
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        n = self.fft_size
        if n <= 0 or n & (n - 1):
            raise InvalidConfig(f"fft_size={n} is not a power of two")
        if n < self.frame_length:
            raise InvalidConfig("fft_size must be >= frame_length")
        if not 0 < self.hop_length <= self.frame_length:
            raise InvalidConfig("hop_length must be in (0, frame_length]")
        if not 0 < self.num_cepstra <= self.num_mel_filters:
            raise InvalidConfig("num_cepstra must be in (0, num_mel_filters]")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise InvalidConfig("need 0 <= fmin < fmax <= sample_rate/2")
        if not self.log_floor > 0:
            raise InvalidConfig("log_floor must be positive")

    def num_frames(self, num_samples: int) -> int:
        if num_samples < self.frame_length:
            raise ClipTooShort(
                f"{num_samples} samples < frame_length {self.frame_length}")
        return (num_samples - self.frame_length) // self.hop_length + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DspConfig":
        return cls(**d)


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray  # [num_frames, num_cepstra]
    config: DspConfig

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _as_samples(x) -> np.ndarray:
    if isinstance(x, AudioClip):
        return x.samples
    return np.asarray(x)


def frame_signal(samples, config: DspConfig) -> np.ndarray:
    """Slice PCM samples (or a batch, last axis = time) into frames scaled to [-1, 1).

    Returns an array of shape ``(..., num_frames, frame_length)``.
    """
    return _frame_view(samples, config) / FULL_SCALE


def _frame_view(samples, config: DspConfig) -> np.ndarray:
    x = _as_samples(samples)
    n = config.num_frames(x.shape[-1])
    win = np.lib.stride_tricks.sliding_window_view(x, config.frame_length, axis=-1)
    return win[..., :(n - 1) * config.hop_length + 1:config.hop_length, :]


@lru_cache(maxsize=None)
def _hann(length: int) -> np.ndarray:
    # periodic Hann
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)
    w.setflags(write=False)
    return w


def power_spectrum(frame, config: DspConfig) -> np.ndarray:
    """Hann-windowed magnitude-squared rfft; works on any leading batch shape."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[-1] != config.frame_length:
        raise ValueError(
            f"frame length {frame.shape[-1]} != frame_length {config.frame_length}")
    spec = np.fft.rfft(frame * _hann(config.frame_length), n=config.fft_size)
    return spec.real ** 2 + spec.imag ** 2


@lru_cache(maxsize=None)
def _filterbank_cached(config: DspConfig) -> np.ndarray:
    m = config.num_mel_filters
    n_bins = config.fft_size // 2 + 1
    mel_points = np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), m + 2)
    hz_points = mel_to_hz(mel_points)
    bins = np.rint(hz_points * config.fft_size / config.sample_rate).astype(int)
    if np.any(np.diff(bins) <= 0):
        j = int(np.argmax(np.diff(bins) <= 0))
        raise DegenerateFilter(
            f"mel points {j} and {j + 1} both map to FFT bin {bins[j]}; "
            "use fewer filters or a larger fft_size")
    fb = np.zeros((m, n_bins))
    k = np.arange(n_bins)
    for j in range(m):
        lo, c, hi = bins[j], bins[j + 1], bins[j + 2]
        rise = (k - lo) / (c - lo)
        fall = (hi - k) / (hi - c)
        fb[j] = np.clip(np.minimum(rise, fall), 0.0, None)
    fb.setflags(write=False)
    return fb


def mel_filterbank(config: DspConfig) -> np.ndarray:
    """Triangular filters, shape ``[num_mel_filters, fft_size // 2 + 1]``.

    Filter edges and centres are mel-spaced frequencies rounded to the
    nearest FFT bin, so each filter peaks (weight 1) exactly at the bin
    nearest its centre frequency.
    """
    return _filterbank_cached(config)


def filter_center_frequencies(config: DspConfig) -> np.ndarray:
    m = config.num_mel_filters
    mel_points = np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), m + 2)
    return mel_to_hz(mel_points[1:-1])


def rowwise_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` where every output row depends only on its own input row.

    BLAS picks different kernels for edge rows and batch sizes, so identical
    rows can differ in the last bit. Elementwise product + last-axis sum does
    not, which keeps features and predictions independent of batch layout.
    """
    return (a[..., None, :] * b.T).sum(axis=-1)


@lru_cache(maxsize=None)
def _filter_spans(config: DspConfig):
    fb = mel_filterbank(config)
    spans = []
    for row in fb:
        nz = np.flatnonzero(row)
        spans.append((int(nz[0]), int(nz[-1]) + 1, row[nz[0]:nz[-1] + 1].copy()))
    return tuple(spans)


def filterbank_energies(spec: np.ndarray, config: DspConfig) -> np.ndarray:
    """``spec @ mel_filterbank(config).T`` via per-filter sparse row reductions."""
    spans = _filter_spans(config)
    out = np.empty(spec.shape[:-1] + (len(spans),))
    for j, (lo, hi, w) in enumerate(spans):
        out[..., j] = (spec[..., lo:hi] * w).sum(axis=-1)
    return out


@lru_cache(maxsize=None)
def dct_matrix(size: int) -> np.ndarray:
    """Orthonormal DCT-II basis; ``y = D @ x`` and ``x = D.T @ y``."""
    n = np.arange(size)
    d = np.cos(np.pi * (n[None, :] + 0.5) * n[:, None] / size)
    d *= np.sqrt(2.0 / size)
    d[0] /= np.sqrt(2.0)
    d.setflags(write=False)
    return d


def dct2(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x @ dct_matrix(x.shape[-1]).T


def idct2(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return y @ dct_matrix(y.shape[-1])


def mfcc_array(samples, config: DspConfig) -> np.ndarray:
    """MFCCs for a clip or a batch of clips: ``(..., num_frames, num_cepstra)``."""
    frames = _frame_view(samples, config)
    lead = frames.shape[:-1]
    # scaling and windowing fused into one pass; same result as
    # power_spectrum(frame_signal(...)) up to float rounding
    windowed = frames.reshape(-1, config.frame_length) * (_hann(config.frame_length) / FULL_SCALE)
    spec = np.fft.rfft(windowed, n=config.fft_size)
    spec = spec.real ** 2 + spec.imag ** 2
    logmel = np.log(filterbank_energies(spec, config) + config.log_floor)
    basis = dct_matrix(config.num_mel_filters)[:config.num_cepstra].T
    return rowwise_matmul(logmel, basis).reshape(*lead, config.num_cepstra)


def mfcc(clip: Union[AudioClip, np.ndarray], config: DspConfig = DspConfig()) -> FeatureMatrix:
    return FeatureMatrix(mfcc_array(clip, config), config)


def write_feature_csv(features: FeatureMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"c{i}" for i in range(features.values.shape[1])])
        for row in features.values:
            w.writerow([repr(float(v)) for v in row])
