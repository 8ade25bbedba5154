import struct
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kwsattack.audio_io import AudioClip, pad_or_trim, parse_wav, read_wav, write_wav
from kwsattack.errors import NotWav, UnsupportedFormat

# [0, 1, -1] as a canonical PCM16 mono 16 kHz file, header written out by hand
MINIMAL_WAV = bytes.fromhex(
    "52494646" "2a000000" "57415645"          # RIFF, 36 + 6, WAVE
    "666d7420" "10000000" "0100" "0100"       # fmt , 16, PCM, mono
    "803e0000" "007d0000" "0200" "1000"       # 16000 Hz, 32000 B/s, align 2, 16 bit
    "64617461" "06000000" "0000" "0100" "ffff"  # data, 6 bytes, samples
)

sample_vectors = arrays(np.int16, st.integers(1, 400),
                        elements=st.integers(-32768, 32767))


def test_minimal_header_decodes(tmp_path):
    path = tmp_path / "min.wav"
    path.write_bytes(MINIMAL_WAV)
    clip = read_wav(path)
    assert clip.samples.tolist() == [0, 1, -1]
    assert clip.sample_rate == 16000


def test_writer_reproduces_handmade_header(tmp_path):
    write_wav(AudioClip(np.array([0, 1, -1], dtype=np.int16)), tmp_path / "w.wav")
    assert (tmp_path / "w.wav").read_bytes() == MINIMAL_WAV


def test_golden_fixture_matches_handmade_bytes():
    golden = (__import__("pathlib").Path(__file__).parent / "fixtures" / "minimal.wav")
    assert golden.read_bytes() == MINIMAL_WAV


@settings(max_examples=60, deadline=None)
@given(sample_vectors)
def test_round_trip_identity(tmp_path_factory, samples):
    path = tmp_path_factory.mktemp("rt") / "x.wav"
    clip = AudioClip(samples)
    write_wav(clip, path)
    assert read_wav(path) == clip


@settings(max_examples=30, deadline=None)
@given(sample_vectors)
def test_stdlib_wave_reads_our_output(tmp_path_factory, samples):
    path = tmp_path_factory.mktemp("std") / "x.wav"
    write_wav(AudioClip(samples), path)
    with wave.open(str(path), "rb") as w:
        assert (w.getnchannels(), w.getsampwidth(), w.getframerate()) == (1, 2, 16000)
        frames = w.readframes(w.getnframes())
    assert np.array_equal(np.frombuffer(frames, "<i2"), samples)


def test_data_size_field_and_determinism(tmp_path):
    clip = AudioClip(np.arange(-500, 500, dtype=np.int16))
    write_wav(clip, tmp_path / "a.wav")
    write_wav(clip, tmp_path / "b.wav")
    raw = (tmp_path / "a.wav").read_bytes()
    assert raw == (tmp_path / "b.wav").read_bytes()
    assert len(raw) == 44 + 2 * len(clip)
    assert struct.unpack_from("<I", raw, 40)[0] == 2 * len(clip)


def _header(channels=1, rate=16000, bits=16, fmt=1):
    block = channels * bits // 8
    return struct.pack("<4sI4s4sIHHIIHH4sI", b"RIFF", 40, b"WAVE", b"fmt ", 16, fmt,
                       channels, rate, rate * block, block, bits, b"data", 4) + b"\0" * 4


@pytest.mark.parametrize("kwargs, field", [
    (dict(channels=2), "channels"),
    (dict(bits=8), "bits_per_sample"),
    (dict(rate=44100), "sample_rate"),
    (dict(fmt=3), "format"),
])
def test_unsupported_formats_name_the_field(kwargs, field):
    with pytest.raises(UnsupportedFormat, match=field):
        parse_wav(_header(**kwargs))


def test_not_wav():
    with pytest.raises(NotWav):
        parse_wav(b"OggS" + b"\0" * 40)


def test_extra_chunks_are_skipped():
    list_chunk = b"LIST" + struct.pack("<I", 5) + b"INFOx" + b"\0"  # odd size, padded
    buf = MINIMAL_WAV[:12] + list_chunk + MINIMAL_WAV[12:]
    assert parse_wav(buf).samples.tolist() == [0, 1, -1]


def test_pad_or_trim():
    short = AudioClip(np.ones(15000, dtype=np.int16))
    out = pad_or_trim(short, 16000)
    assert len(out) == 16000 and not out.samples[15000:].any() and out.samples[:15000].all()

    exact = AudioClip(np.arange(16000) % 100)
    assert pad_or_trim(exact, 16000) == exact

    long = AudioClip(np.arange(17000) % 1000)
    assert np.array_equal(pad_or_trim(long, 16000).samples, long.samples[:16000])


@settings(max_examples=40, deadline=None)
@given(sample_vectors, st.integers(1, 500))
def test_pad_or_trim_idempotent(samples, target):
    once = pad_or_trim(AudioClip(samples), target)
    assert len(once) == target
    assert pad_or_trim(once, target) == once


def test_clip_is_immutable():
    clip = AudioClip(np.zeros(4, dtype=np.int16))
    with pytest.raises(ValueError):
        clip.samples[0] = 1


def test_out_of_range_samples_rejected():
    with pytest.raises(ValueError):
        AudioClip(np.array([40000]))
