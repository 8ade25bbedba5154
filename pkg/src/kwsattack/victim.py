"""
Small keyword-spotting CNN used as the black-box oracle.

Architecture (batch-first, all numpy)::

    MFCC [F x C] -> per-coefficient standardisation
      -> conv 3x3 (valid, 1 -> n_filters) -> ReLU -> max-pool 2x2
      -> dense (hidden) -> ReLU -> dense (K) -> softmax

Weights are held as float64 arrays whose values are exactly representable
in float32, so saving to the little-endian float32 model file and loading
it back is prediction-exact.
"""
from __future__ import annotations

import json
import struct
import threading
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .audio_io import AudioClip
from .dsp import DspConfig, mfcc_array
from .errors import (CorruptModel, InsufficientData, ModelShapeMismatch,
                     UnknownLabel)

MAGIC = b"KWSMODEL"
FORMAT_VERSION = 1

# order matters: it is the on-disk order of the weight blob
PARAM_NAMES = ("norm_mean", "norm_std", "conv_w", "conv_b", "w1", "b1", "w2", "b2")
TRAINABLE = ("conv_w", "conv_b", "w1", "b1", "w2", "b2")


@dataclass(frozen=True)
class LabelSet:
    labels: Tuple[str, ...]

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise ValueError("a label set needs at least two labels")
        if len(set(labels)) != len(labels):
            raise ValueError("labels must be unique")

    def __len__(self):
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownLabel(f"unknown label {label!r}; known: {list(self.labels)}") from None


@dataclass(frozen=True)
class Architecture:
    n_filters: int = 8
    kernel: int = 3
    pool: int = 2
    hidden: int = 32

    def conv_out(self, frames: int, cepstra: int) -> Tuple[int, int]:
        return frames - self.kernel + 1, cepstra - self.kernel + 1

    def pool_out(self, frames: int, cepstra: int) -> Tuple[int, int]:
        h, w = self.conv_out(frames, cepstra)
        return h // self.pool, w // self.pool

    def flat_size(self, frames: int, cepstra: int) -> int:
        ph, pw = self.pool_out(frames, cepstra)
        return ph * pw * self.n_filters


def param_shapes(arch: Architecture, frames: int, cepstra: int, k: int) -> Dict[str, tuple]:
    flat = arch.flat_size(frames, cepstra)
    return {
        "norm_mean": (cepstra,),
        "norm_std": (cepstra,),
        "conv_w": (arch.kernel * arch.kernel, arch.n_filters),
        "conv_b": (arch.n_filters,),
        "w1": (flat, arch.hidden),
        "b1": (arch.hidden,),
        "w2": (arch.hidden, k),
        "b2": (k,),
    }


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    # x: [B, H, W] -> [B, H-k+1, W-k+1, k*k]
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    b, oh, ow = win.shape[:3]
    return win.reshape(b, oh, ow, k * k)


def _per_row(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    # one vector-matrix product per clip: same shape every call, so a clip's
    # result never depends on what else is in the batch
    return np.stack([row @ w for row in a]) if len(a) else np.zeros((0, w.shape[1]))


def forward(params: Dict[str, np.ndarray], arch: Architecture, feats: np.ndarray,
            keep_cache: bool = False):
    """Logits for a batch of feature matrices ``[B, F, C]``.

    Each clip's logits are bit-identical whatever batch it is evaluated in
    (no batch-wide BLAS calls on the inference path).
    """
    x = (feats - params["norm_mean"]) / params["norm_std"]
    k = arch.kernel
    b, f, c = x.shape
    oh, ow = f - k + 1, c - k + 1
    w = params["conv_w"]
    conv = np.zeros((b, oh, ow, w.shape[1]))
    for i in range(k):
        for j in range(k):
            conv += x[:, i:i + oh, j:j + ow, None] * w[i * k + j]
    conv += params["conv_b"]
    act = np.maximum(conv, 0.0)
    p = arch.pool
    nf = act.shape[-1]
    ph, pw = oh // p, ow // p
    blocks = act[:, :ph * p, :pw * p].reshape(b, ph, p, pw, p, nf)
    pooled = blocks.max(axis=(2, 4))
    flat = pooled.reshape(b, -1)
    h_pre = _per_row(flat, params["w1"]) + params["b1"]
    h = np.maximum(h_pre, 0.0)
    logits = _per_row(h, params["w2"]) + params["b2"]
    if not keep_cache:
        return logits
    cache = dict(x=x, conv=conv, blocks=blocks, pooled=pooled,
                 flat=flat, h_pre=h_pre, h=h)
    return logits, cache


def loss_and_grads(params: Dict[str, np.ndarray], arch: Architecture,
                   feats: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over the batch and its gradient for every trainable block."""
    logits, c = forward(params, arch, feats, keep_cache=True)
    b = feats.shape[0]
    probs = softmax(logits)
    loss = -np.mean(np.log(probs[np.arange(b), y]))
    d_logits = probs.copy()
    d_logits[np.arange(b), y] -= 1.0
    d_logits /= b

    g = {}
    g["w2"] = c["h"].T @ d_logits
    g["b2"] = d_logits.sum(axis=0)
    d_h = d_logits @ params["w2"].T
    d_hpre = d_h * (c["h_pre"] > 0)
    g["w1"] = c["flat"].T @ d_hpre
    g["b1"] = d_hpre.sum(axis=0)
    d_pooled = (d_hpre @ params["w1"].T).reshape(c["pooled"].shape)

    # route pooled gradient to the first maximum of each window
    blocks = c["blocks"]
    bb, ph, p, pw, _, nf = blocks.shape
    win = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(bb, ph, pw, nf, p * p)
    first = win.argmax(axis=-1)
    mask = np.zeros_like(win)
    np.put_along_axis(mask, first[..., None], 1.0, axis=-1)
    d_win = mask * d_pooled[..., None]
    d_blocks = d_win.reshape(bb, ph, pw, nf, p, p).transpose(0, 1, 4, 2, 5, 3)
    d_act = np.zeros_like(c["conv"])
    d_act[:, :ph * p, :pw * p] = d_blocks.reshape(bb, ph * p, pw * p, nf)
    d_conv = d_act * (c["conv"] > 0)
    cols = _im2col(c["x"], arch.kernel)
    g["conv_w"] = np.einsum("bhwk,bhwf->kf", cols, d_conv)
    g["conv_b"] = d_conv.sum(axis=(0, 1, 2))
    return loss, g


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    learning_rate: float = 0.05
    batch_size: int = 16
    seed: int = 0
    hidden: int = 32
    n_filters: int = 8


class VictimModel:
    """Black-box oracle: ``predict(clip) -> probability vector over K labels``."""

    def __init__(self, label_set: LabelSet, dsp_config: DspConfig,
                 params: Dict[str, np.ndarray], arch: Architecture = Architecture()):
        self.label_set = label_set
        self.dsp_config = dsp_config
        self.arch = arch
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self._queries = 0
        self._lock = threading.Lock()
        self._check_shapes()

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    @property
    def num_labels(self) -> int:
        return len(self.label_set)

    def _input_dims(self) -> Tuple[int, int]:
        cfg = self.dsp_config
        return cfg.num_frames(cfg.sample_rate), cfg.num_cepstra

    def _check_shapes(self):
        frames, cep = self._input_dims()
        if min(self.arch.pool_out(frames, cep)) < 1:
            raise ModelShapeMismatch("feature map too small for the architecture")
        expected = param_shapes(self.arch, frames, cep, self.num_labels)
        missing = set(expected) - set(self.params)
        if missing:
            raise ModelShapeMismatch(f"missing parameter blocks: {sorted(missing)}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ModelShapeMismatch(
                    f"{name} has shape {self.params[name].shape}, expected {shape} "
                    f"for {self.num_labels} labels and dsp config {frames}x{cep}")

    def _count(self, n: int):
        with self._lock:
            self._queries += n

    def query_count(self) -> int:
        return self._queries

    def features(self, clips: Sequence[AudioClip]) -> np.ndarray:
        frames, _ = self._input_dims()
        n = self.dsp_config.sample_rate
        batch = np.stack([np.asarray(getattr(c, "samples", c)) for c in clips])
        if batch.shape[1] != n:
            raise ModelShapeMismatch(f"clips must have {n} samples, got {batch.shape[1]}")
        return mfcc_array(batch, self.dsp_config)

    def predict_many(self, clips: Sequence[AudioClip]) -> np.ndarray:
        """Probabilities ``[len(clips), K]``; counts one query per clip."""
        if len(clips) == 0:
            return np.zeros((0, self.num_labels))
        logits = forward(self.params, self.arch, self.features(clips))
        self._count(len(clips))
        return softmax(logits)

    def predict(self, clip: AudioClip) -> np.ndarray:
        return self.predict_many([clip])[0]

    def classify(self, clip: AudioClip) -> str:
        return self.label_set.labels[int(np.argmax(self.predict(clip)))]


def query_count(model) -> int:
    return model.query_count()


def predict(model, clip: AudioClip) -> np.ndarray:
    return model.predict(clip)


def _f32(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def init_params(arch: Architecture, frames: int, cepstra: int, k: int,
                rng: np.random.Generator) -> Dict[str, np.ndarray]:
    shapes = param_shapes(arch, frames, cepstra, k)
    params = {}
    for name, shape in shapes.items():
        if name in ("conv_w", "w1", "w2"):
            params[name] = rng.standard_normal(shape) * np.sqrt(2.0 / shape[0])
        elif name == "norm_std":
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


def train(corpus: Sequence[AudioClip], hyper: TrainConfig = TrainConfig(),
          dsp_config: DspConfig = DspConfig(),
          labels: Optional[Sequence[str]] = None) -> VictimModel:
    """Mini-batch SGD on mean cross-entropy. Same seed and corpus give identical weights."""
    if labels is None:
        labels = sorted({c.label for c in corpus if c.label is not None})
    if len(labels) < 2:
        raise InsufficientData("training needs at least two labels")
    label_set = LabelSet(tuple(labels))
    counts = {lab: 0 for lab in label_set.labels}
    for c in corpus:
        if c.label is None:
            raise InsufficientData("every training clip needs a label")
        counts[label_set.labels[label_set.index(c.label)]] += 1
    thin = [lab for lab, n in counts.items() if n < 2]
    if thin:
        raise InsufficientData(f"labels with fewer than 2 clips: {thin}")

    arch = Architecture(n_filters=hyper.n_filters, hidden=hyper.hidden)
    frames, cep = dsp_config.num_frames(dsp_config.sample_rate), dsp_config.num_cepstra
    y = np.array([label_set.index(c.label) for c in corpus])
    feats = mfcc_array(np.stack([c.samples for c in corpus]), dsp_config)

    rng = np.random.default_rng(hyper.seed)
    params = init_params(arch, frames, cep, len(label_set), rng)
    params["norm_mean"] = _f32(feats.mean(axis=(0, 1)))
    params["norm_std"] = _f32(feats.std(axis=(0, 1)) + 1e-3)

    n = len(corpus)
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            _, grads = loss_and_grads(params, arch, feats[idx], y[idx])
            for name in TRAINABLE:
                params[name] = params[name] - hyper.learning_rate * grads[name]
    params = {k: _f32(v) for k, v in params.items()}
    return VictimModel(label_set, dsp_config, params, arch)


def accuracy(model: VictimModel, corpus: Sequence[AudioClip]) -> float:
    """Fraction of clips whose argmax prediction equals the clip label."""
    if not corpus:
        return 0.0
    truth = [model.label_set.index(c.label) for c in corpus]
    hits = 0
    for start in range(0, len(corpus), 64):
        probs = model.predict_many(corpus[start:start + 64])
        hits += int(np.sum(probs.argmax(axis=1) == truth[start:start + 64]))
    return hits / len(corpus)


# ---------------------------------------------------------------- persistence
#
# layout: MAGIC | u32 version | u32 header_len | header JSON (utf-8)
#         | float32 LE weights in PARAM_NAMES order | u32 crc32 of all prior bytes

def model_to_bytes(model: VictimModel) -> bytes:
    header = {
        "labels": list(model.label_set.labels),
        "dsp_config": model.dsp_config.to_dict(),
        "architecture": {"n_filters": model.arch.n_filters, "kernel": model.arch.kernel,
                         "pool": model.arch.pool, "hidden": model.arch.hidden},
        "shapes": {name: list(model.params[name].shape) for name in PARAM_NAMES},
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    blob = b"".join(model.params[name].astype("<f4").tobytes() for name in PARAM_NAMES)
    body = MAGIC + struct.pack("<II", FORMAT_VERSION, len(hbytes)) + hbytes + blob
    return body + struct.pack("<I", zlib.crc32(body))


def model_from_bytes(buf: bytes) -> VictimModel:
    if len(buf) < len(MAGIC) + 12 or not buf.startswith(MAGIC):
        raise CorruptModel("bad magic or truncated header")
    (crc,) = struct.unpack("<I", buf[-4:])
    body = buf[:-4]
    if zlib.crc32(body) != crc:
        raise CorruptModel("checksum mismatch (file truncated or edited)")
    version, hlen = struct.unpack_from("<II", body, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CorruptModel(f"unsupported model format version {version}")
    off = len(MAGIC) + 8
    try:
        header = json.loads(body[off:off + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptModel(f"unreadable header: {exc}") from None
    off += hlen
    params = {}
    for name in PARAM_NAMES:
        shape = tuple(header["shapes"][name])
        count = int(np.prod(shape))
        end = off + 4 * count
        if end > len(body):
            raise CorruptModel("weight blob shorter than declared shapes")
        params[name] = np.frombuffer(body[off:end], dtype="<f4").astype(np.float64).reshape(shape)
        off = end
    if off != len(body):
        raise CorruptModel("trailing bytes after weight blob")
    try:
        label_set = LabelSet(tuple(header["labels"]))
    except ValueError as exc:
        raise ModelShapeMismatch(str(exc)) from None
    return VictimModel(label_set, DspConfig.from_dict(header["dsp_config"]), params,
                       Architecture(**header["architecture"]))


def save_model(model: VictimModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> VictimModel:
    return model_from_bytes(Path(path).read_bytes())
