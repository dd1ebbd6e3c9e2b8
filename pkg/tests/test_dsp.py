import math
import struct
import wave

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tinyst import dsp
from tinyst.dsp import Waveform
from tinyst.errors import CorruptFileError, DomainError, TooShortError, UnsupportedFormatError


def _raw_wav(path, frames: bytes, channels=1, width=2, rate=16000):
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(width)
        wf.setframerate(rate)
        wf.writeframes(frames)


def test_read_silence(tmp_path):
    p = tmp_path / "s.wav"
    _raw_wav(p, b"\x00\x00" * 16000)
    w = dsp.read_wav(p)
    assert len(w) == 16000 and not w.samples.any()
    assert w.sample_rate_hz == 16000


def test_read_scaling(tmp_path):
    p = tmp_path / "m.wav"
    _raw_wav(p, struct.pack("<hh", 32767, -32768))
    w = dsp.read_wav(p)
    assert w.samples[0] == 32767 / 32768
    assert w.samples[1] == -1.0


@pytest.mark.parametrize("kwargs,field", [
    ({"channels": 2}, "channels"),
    ({"width": 1}, "bit_depth"),
    ({"rate": 8000}, "sample_rate"),
])
def test_unsupported_formats(tmp_path, kwargs, field):
    p = tmp_path / "bad.wav"
    _raw_wav(p, b"\x00" * 400, **kwargs)
    with pytest.raises(UnsupportedFormatError) as err:
        dsp.read_wav(p)
    assert err.value.field == field


def test_truncated_file(tmp_path):
    p = tmp_path / "t.wav"
    _raw_wav(p, b"\x01\x00" * 1000)
    data = p.read_bytes()
    p.write_bytes(data[:-500])
    with pytest.raises(CorruptFileError):
        dsp.read_wav(p)


def test_header_only_garbage(tmp_path):
    p = tmp_path / "g.wav"
    p.write_bytes(b"RIFF")
    with pytest.raises(CorruptFileError):
        dsp.read_wav(p)


def test_write_read_round_trip(tmp_path, rng):
    x = np.round(rng.uniform(-1, 1, 1234) * 32767) / 32768
    p = tmp_path / "r.wav"
    dsp.write_wav(p, Waveform(x))
    assert np.array_equal(dsp.read_wav(p).samples, x)


def test_waveform_rejects_out_of_range():
    with pytest.raises(DomainError):
        Waveform(np.array([0.0, 1.5]))
    with pytest.raises(DomainError):
        Waveform(np.array([np.nan]))


@pytest.mark.parametrize("factor,expected", [(0.9, 17778), (1.1, 14545)])
def test_speed_lengths(factor, expected):
    out = dsp.speed_perturb(Waveform(np.zeros(16000)), factor)
    assert len(out) == expected
    assert out.sample_rate_hz == 16000


def test_speed_identity(rng):
    w = Waveform(rng.uniform(-0.5, 0.5, 999))
    out = dsp.speed_perturb(w, 1.0)
    assert np.array_equal(out.samples, w.samples)
    assert out.samples is not w.samples


@pytest.mark.parametrize("factor", [0.0, -1.0])
def test_speed_bad_factor(factor):
    with pytest.raises(DomainError):
        dsp.speed_perturb(Waveform(np.zeros(10)), factor)


@given(st.integers(1, 40000), st.sampled_from([0.9, 1.1]))
def test_speed_duration_property(n, factor):
    out = dsp.speed_perturb(Waveform(np.zeros(n)), factor)
    assert abs(len(out) - n / factor) <= 1


def test_speed_shifts_pitch_down():
    t = np.arange(16000) / 16000
    w = Waveform(0.5 * np.sin(2 * np.pi * 440 * t))
    bin_of = lambda f: int(np.argmax(dsp.log_mel(Waveform(0.5 * np.sin(2 * np.pi * f * t))).mean(axis=0)))
    before = int(np.argmax(dsp.log_mel(w).mean(axis=0)))
    after = int(np.argmax(dsp.log_mel(dsp.speed_perturb(w, 0.9)).mean(axis=0)))
    target = bin_of(396)
    assert before != target
    assert abs(after - target) < abs(before - target) or after == target


def test_speed_preserves_tone_amplitude():
    t = np.arange(16000) / 16000
    w = Waveform(0.5 * np.sin(2 * np.pi * 300 * t))
    out = dsp.speed_perturb(w, 1.1).samples
    assert np.max(np.abs(out[100:-100])) == pytest.approx(0.5, abs=0.01)


def test_frame_count():
    assert dsp.log_mel(Waveform(np.zeros(16000))).shape == (98, 80)
    assert dsp.log_mel(Waveform(np.zeros(400))).shape == (1, 80)


def test_log_mel_silence_is_floor():
    f = dsp.log_mel(Waveform(np.zeros(4000)))
    assert np.all(f == np.log(1e-10))


def test_log_mel_too_short():
    with pytest.raises(TooShortError) as err:
        dsp.log_mel(Waveform(np.zeros(399)))
    assert err.value.minimum == 400


def test_log_mel_scaling_adds_log4(rng):
    x = rng.uniform(-0.4, 0.4, 8000)
    a = dsp.log_mel(Waveform(x))
    b = dsp.log_mel(Waveform(2 * x))
    assert np.allclose(b - a, math.log(4), atol=1e-6)


def test_log_mel_deterministic(rng):
    w = Waveform(rng.uniform(-1, 1, 5000))
    assert np.array_equal(dsp.log_mel(w), dsp.log_mel(w))


def test_mel_filterbank_shape_and_coverage():
    fb = dsp.mel_filterbank()
    assert fb.shape == (80, 257)
    assert np.all(fb.sum(axis=1) > 0)
    assert np.all(fb >= 0)


def test_cmvn_constant():
    assert np.all(dsp.cmvn(np.full((5, 80), 3.0)) == 0)


def test_cmvn_two_frames():
    f = np.stack([np.zeros(80), np.full(80, 2.0)])
    out = dsp.cmvn(f)
    assert np.allclose(out[0], -1) and np.allclose(out[1], 1)


def test_cmvn_too_short():
    with pytest.raises(TooShortError):
        dsp.cmvn(np.zeros((1, 80)))


@given(st.integers(2, 50), st.integers(0, 2 ** 31))
def test_cmvn_properties(t, seed):
    f = np.random.default_rng(seed).normal(3.0, 5.0, (t, 80))
    out = dsp.cmvn(f)
    assert np.allclose(out.mean(axis=0), 0, atol=1e-6)
    assert np.allclose(out.var(axis=0), 1, atol=1e-6)
    assert np.allclose(dsp.cmvn(out), out, atol=1e-6)


def test_feature_dump_round_trip(tmp_path, rng):
    f = rng.normal(size=(7, 80)).astype(np.float32)
    p = tmp_path / "f.bin"
    dsp.write_features(p, f)
    raw = p.read_bytes()
    assert struct.unpack("<II", raw[:8]) == (7, 80)
    assert len(raw) == 8 + 7 * 80 * 4
    assert np.array_equal(dsp.read_features(p), f.astype(np.float64))


def test_feature_dump_truncated(tmp_path):
    p = tmp_path / "f.bin"
    p.write_bytes(struct.pack("<II", 3, 80) + b"\x00" * 10)
    with pytest.raises(CorruptFileError):
        dsp.read_features(p)


def test_virtual_speed_reference(tmp_path, rng):
    x = np.round(rng.uniform(-0.5, 0.5, 16000) * 32767) / 32768
    dsp.write_wav(tmp_path / "a.wav", Waveform(x))
    ref = dsp.speed_ref("a.wav", 0.9)
    assert ref == "a.wav#sp0.9"
    w = dsp.load_audio(ref, tmp_path)
    assert np.array_equal(w.samples, dsp.speed_perturb(Waveform(x), 0.9).samples)
