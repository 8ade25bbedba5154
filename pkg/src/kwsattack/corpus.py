"""
Labeled clip collections.

Two sources: a ``<label>/<clip>.wav`` directory tree, or a built-in
synthetic generator that renders one tone/chirp pattern family per label
(with pitch, timing, loudness and background-noise jitter) so tests and CI
need no dataset download.
"""
from __future__ import annotations

import logging
from pathlib import Path
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence

import numpy as np

from .audio_io import CLIP_SAMPLES, SAMPLE_RATE, AudioClip, pad_or_trim, read_wav, write_wav

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CorpusEntry:
    clip_id: str  # "<label>/<name>"
    clip: AudioClip

    @property
    def label(self) -> str:
        return self.clip.label


def clips_of(entries: Sequence[CorpusEntry]) -> List[AudioClip]:
    return [e.clip for e in entries]


def load_corpus_dir(root) -> List[CorpusEntry]:
    """Read every ``<label>/*.wav`` under ``root`` (sorted), padded/trimmed to 1 s."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {root}")
    entries = []
    for label_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for wav in sorted(label_dir.glob("*.wav")):
            clip = pad_or_trim(read_wav(wav, label=label_dir.name), CLIP_SAMPLES)
            entries.append(CorpusEntry(f"{label_dir.name}/{wav.stem}", clip))
    return entries


def _tone(t, f0, harmonics=3):
    out = np.zeros_like(t)
    for h in range(1, harmonics + 1):
        out += np.sin(2 * np.pi * h * f0 * t) / h
    return out


def _chirp(t, f_start, f_end, harmonics=3):
    dur = t[-1] - t[0] if len(t) > 1 else 1.0
    k = (f_end - f_start) / dur
    tt = t - t[0]
    phase = 2 * np.pi * (f_start * tt + 0.5 * k * tt ** 2)
    return sum(np.sin(h * phase) / h for h in range(1, harmonics + 1))


def _yes(t, j, rng):
    return _tone(t, 300 * j)


def _no(t, j, rng):
    return _tone(t, 900 * j)


def _up(t, j, rng):
    return _chirp(t, 300 * j, 1200 * j)


def _down(t, j, rng):
    return _chirp(t, 1200 * j, 300 * j)


def _left(t, j, rng):
    return _tone(t, 400 * j, 1) + _tone(t, 1600 * j, 1)


def _right(t, j, rng):
    return _tone(t, 600 * j) * (0.6 + 0.4 * np.sin(2 * np.pi * 8 * t))


def _on(t, j, rng):
    return _tone(t, 2000 * j, 2)


def _off(t, j, rng):
    noise = rng.standard_normal(len(t))
    # crude band emphasis: first difference boosts highs
    return np.diff(noise, prepend=0.0) * 0.5


def _stop(t, j, rng):
    gate = (np.sin(2 * np.pi * 4 * (t - t[0])) > 0).astype(float)
    return _tone(t, 700 * j) * gate


def _go(t, j, rng):
    return _chirp(t, 500 * j, 2500 * j, 2)


PATTERNS: Dict[str, Callable] = {
    "yes": _yes, "no": _no, "up": _up, "down": _down, "left": _left,
    "right": _right, "on": _on, "off": _off, "stop": _stop, "go": _go,
}
DEFAULT_LABELS = tuple(PATTERNS)


WORD_LEVEL = (400.0, 4000.0)    # peak amplitude, PCM units
BACKGROUND_LEVEL = (8.0, 50.0)  # Gaussian noise std, PCM units


def synth_clip(label: str, rng: np.random.Generator, word_level=None,
               background_level=None) -> AudioClip:
    """Render one jittered 1 s clip of ``label``'s pattern family."""
    word_level = word_level or WORD_LEVEL
    background_level = background_level or BACKGROUND_LEVEL
    pattern = PATTERNS[label]
    n = CLIP_SAMPLES
    dur = int(rng.uniform(0.35, 0.6) * n)
    start = int(rng.uniform(0.05, 0.95 - dur / n) * n)
    t = (start + np.arange(dur)) / SAMPLE_RATE
    jitter = rng.uniform(0.92, 1.08)
    word = pattern(t, jitter, rng)
    word = word / (np.max(np.abs(word)) + 1e-12)
    env = np.sin(np.pi * np.arange(dur) / dur) ** 0.5
    amp = rng.uniform(*word_level)
    x = rng.standard_normal(n) * rng.uniform(*background_level)
    x[start:start + dur] += amp * env * word
    samples = np.clip(np.rint(x), -32768, 32767).astype(np.int16)
    return AudioClip(samples, SAMPLE_RATE, label)


def synthetic_corpus(labels: Sequence[str] = DEFAULT_LABELS[:4], clips_per_label: int = 40,
                     seed: int = 0) -> List[CorpusEntry]:
    """Deterministic synthetic corpus in label-major order."""
    unknown = [lab for lab in labels if lab not in PATTERNS]
    if unknown:
        raise ValueError(f"no synthetic pattern for labels {unknown}; choose from {DEFAULT_LABELS}")
    ss = np.random.SeedSequence(seed)
    entries = []
    for lab, child in zip(labels, ss.spawn(len(labels))):
        rng = np.random.default_rng(child)
        for i in range(clips_per_label):
            entries.append(CorpusEntry(f"{lab}/{i:04d}", synth_clip(lab, rng)))
    return entries


def write_corpus_dir(entries: Sequence[CorpusEntry], root) -> None:
    root = Path(root)
    for e in entries:
        label, name = e.clip_id.split("/", 1)
        d = root / label
        d.mkdir(parents=True, exist_ok=True)
        write_wav(e.clip, d / f"{name}.wav")


def split_corpus(entries: Sequence[CorpusEntry], held_out_fraction: float, seed: int = 0):
    """Per-label seeded split into (train, held_out)."""
    rng = np.random.default_rng(seed)
    train, held = [], []
    by_label: Dict[str, List[CorpusEntry]] = {}
    for c in entries:
        by_label.setdefault(c.label, []).append(c)
    for lab in sorted(by_label):
        group = by_label[lab]
        order = rng.permutation(len(group))
        n_held = int(round(held_out_fraction * len(group)))
        held += [group[i] for i in order[:n_held]]
        train += [group[i] for i in order[n_held:]]
    return train, held
