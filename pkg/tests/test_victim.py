import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kwsattack.audio_io import AudioClip
from kwsattack.corpus import clips_of, synthetic_corpus
from kwsattack.dsp import DspConfig
from kwsattack.errors import CorruptModel, InsufficientData, ModelShapeMismatch, UnknownLabel
from kwsattack.victim import (TRAINABLE, Architecture, LabelSet, TrainConfig, VictimModel,
                              accuracy, forward, init_params, load_model, loss_and_grads,
                              model_from_bytes, model_to_bytes, save_model, softmax, train)

from conftest import random_clip


def numeric_grad(params, arch, feats, y, name, index, eps=1e-6):
    plus = {k: v.copy() for k, v in params.items()}
    minus = {k: v.copy() for k, v in params.items()}
    plus[name][index] += eps
    minus[name][index] -= eps
    lp, _ = loss_and_grads(plus, arch, feats, y)
    lm, _ = loss_and_grads(minus, arch, feats, y)
    return (lp - lm) / (2 * eps)


def gradient_probe_errors(seed, probes=50):
    """Worst relative error per trainable block over ``probes`` random entries."""
    rng = np.random.default_rng(seed)
    arch = Architecture(n_filters=4, hidden=8)
    frames, cep, k = 14, 7, 3
    params = init_params(arch, frames, cep, k, rng)
    params["norm_mean"] = rng.normal(size=cep) * 0.1
    params["norm_std"] = rng.uniform(0.5, 2.0, size=cep)
    for name in TRAINABLE:
        params[name] = params[name] + rng.normal(scale=0.1, size=params[name].shape)
    feats = rng.normal(size=(5, frames, cep))
    y = rng.integers(0, k, size=5)
    _, grads = loss_and_grads(params, arch, feats, y)
    worst = {}
    for name in TRAINABLE:
        errs = []
        for _ in range(probes):
            idx = tuple(int(rng.integers(0, s)) for s in params[name].shape)
            a = grads[name][idx]
            n = numeric_grad(params, arch, feats, y, name, idx)
            scale = max(abs(a), abs(n))
            errs.append(0.0 if scale == 0 else abs(a - n) / scale)
        worst[name] = max(errs)
    return worst


def test_gradients_match_finite_differences():
    worst = gradient_probe_errors(seed=7, probes=20)
    assert all(err <= 1e-4 for err in worst.values()), worst


def test_softmax_of_zeros_is_uniform():
    assert np.allclose(softmax(np.zeros((1, 5))), 0.2)


def test_softmax_stable_for_large_logits():
    p = softmax(np.array([[1000.0, 999.0, -1000.0]]))
    assert np.isfinite(p).all() and abs(p.sum() - 1) < 1e-12


def test_zero_final_layer_gives_uniform(small_model, rng):
    params = dict(small_model.params)
    params["w2"] = np.zeros_like(params["w2"])
    params["b2"] = np.zeros_like(params["b2"])
    m = VictimModel(small_model.label_set, small_model.dsp_config, params, small_model.arch)
    assert np.allclose(m.predict(random_clip(rng)), 1 / 3)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([10, 1000, 30000]))
def test_predict_is_a_probability_vector(small_model, seed, scale):
    clip = random_clip(np.random.default_rng(seed), scale=scale)
    p = small_model.predict(clip)
    assert p.shape == (3,)
    assert (p >= 0).all() and (p <= 1).all()
    assert abs(p.sum() - 1) <= 1e-6


def test_predict_batch_invariant(small_model, rng):
    clips = [random_clip(rng) for _ in range(5)]
    batch = small_model.predict_many(clips)
    for c, row in zip(clips, batch):
        assert np.array_equal(small_model.predict(c), row)
    assert np.array_equal(small_model.predict_many(clips[2:4]), batch[2:4])


def test_query_counter(small_model, rng):
    m = model_from_bytes(model_to_bytes(small_model))
    assert m.query_count() == 0
    clip = random_clip(rng)
    for n in range(1, 4):
        m.predict(clip)
        assert m.query_count() == n
    m.predict_many([clip] * 5)
    assert m.query_count() == 8
    assert not hasattr(m, "reset_queries")


def test_separable_tones_reach_full_training_accuracy():
    # a 300 Hz tone against a 2 kHz tone: one MFCC band separates them
    corpus = synthetic_corpus(("yes", "on"), 10, seed=11)
    model = train(clips_of(corpus), TrainConfig(epochs=50, seed=2))
    assert accuracy(model, clips_of(corpus)) == 1.0


def test_training_is_deterministic(small_corpus):
    a = train(clips_of(small_corpus), TrainConfig(epochs=3, seed=5))
    b = train(clips_of(small_corpus), TrainConfig(epochs=3, seed=5))
    assert model_to_bytes(a) == model_to_bytes(b)
    c = train(clips_of(small_corpus), TrainConfig(epochs=3, seed=6))
    assert model_to_bytes(a) != model_to_bytes(c)


def test_training_needs_data():
    one_label = synthetic_corpus(("yes",), 4)
    with pytest.raises(InsufficientData):
        train(clips_of(one_label))
    thin = synthetic_corpus(("yes", "no"), 1)
    with pytest.raises(InsufficientData):
        train(clips_of(thin))


def test_accuracy_self_consistency(small_model, rng):
    clips = [random_clip(rng) for _ in range(6)]
    relabelled = [AudioClip(c.samples, label=small_model.classify(c)) for c in clips]
    assert accuracy(small_model, relabelled) == 1.0


def test_accuracy_unknown_label(small_model, rng):
    with pytest.raises(UnknownLabel):
        accuracy(small_model, [AudioClip(random_clip(rng).samples, label="banana")])


def test_persistence_round_trip(small_model, rng, tmp_path):
    path = tmp_path / "m.kws"
    save_model(small_model, path)
    loaded = load_model(path)
    assert loaded.label_set == small_model.label_set
    assert loaded.dsp_config == small_model.dsp_config
    for _ in range(5):
        clip = random_clip(rng)
        assert np.array_equal(loaded.predict(clip), small_model.predict(clip))
    save_model(loaded, tmp_path / "again.kws")
    assert (tmp_path / "again.kws").read_bytes() == path.read_bytes()


def test_truncated_model_is_corrupt(small_model):
    raw = model_to_bytes(small_model)
    for cut in (5, 40, len(raw) // 2, len(raw) - 1):
        with pytest.raises(CorruptModel):
            model_from_bytes(raw[:cut])


def test_flipped_byte_is_corrupt(small_model):
    raw = bytearray(model_to_bytes(small_model))
    raw[len(raw) // 2] ^= 0xFF
    with pytest.raises(CorruptModel):
        model_from_bytes(bytes(raw))


def _edit_header(raw: bytes, edit) -> bytes:
    import json
    hlen = struct.unpack_from("<I", raw, 12)[0]
    header = json.loads(raw[16:16 + hlen])
    edit(header)
    hbytes = json.dumps(header, sort_keys=True).encode()
    body = raw[:12] + struct.pack("<I", len(hbytes)) + hbytes + raw[16 + hlen:-4]
    return body + struct.pack("<I", zlib.crc32(body))


def test_edited_label_count_is_shape_mismatch(small_model):
    raw = model_to_bytes(small_model)
    edited = _edit_header(raw, lambda h: h["labels"].append("extra"))
    with pytest.raises(ModelShapeMismatch):
        model_from_bytes(edited)


def test_dsp_config_inconsistent_with_weights(small_model):
    raw = model_to_bytes(small_model)
    edited = _edit_header(raw, lambda h: h["dsp_config"].update(num_cepstra=12))
    with pytest.raises(ModelShapeMismatch):
        model_from_bytes(edited)


def test_label_set_rules():
    with pytest.raises(ValueError):
        LabelSet(("a",))
    with pytest.raises(ValueError):
        LabelSet(("a", "a"))
    assert LabelSet(("b", "a")).index("a") == 1


def test_forward_shapes(rng):
    arch = Architecture()
    params = init_params(arch, 98, 10, 4, rng)
    assert forward(params, arch, rng.normal(size=(3, 98, 10))).shape == (3, 4)
