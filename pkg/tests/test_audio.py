import struct
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bwe.audio import AudioClip, WavError, load_wav, save_wav


def _pcm16_file(path, values, channels=2, rate=44100):
    data = np.asarray(values, dtype="<i2").tobytes()
    fmt = struct.pack("<HHIIHH", 1, channels, rate, rate * 2 * channels, 2 * channels, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", len(data)) + data
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


def test_pcm16_scaling(tmp_path):
    p = tmp_path / "a.wav"
    _pcm16_file(p, [16384, -16384, -32768, 32767])
    clip = load_wav(p)
    assert clip.samples.shape == (2, 2)
    assert clip.samples[0, 0] == 0.5
    assert clip.samples[1, 0] == -0.5
    assert clip.samples[0, 1] == -1.0


def test_mono_is_duplicated_with_warning(tmp_path):
    p = tmp_path / "m.wav"
    _pcm16_file(p, [100, 200, 300], channels=1)
    with pytest.warns(UserWarning, match="mono"):
        clip = load_wav(p)
    assert np.array_equal(clip.samples[0], clip.samples[1])
    assert clip.num_samples == 3


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4000), st.integers(0, 2**32 - 1))
def test_pcm16_round_trip_within_one_lsb(n, seed):
    import tempfile
    from pathlib import Path

    x = np.random.default_rng(seed).uniform(-1, 1, (2, n))
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "r.wav"
        save_wav(AudioClip(x), p)
        y = load_wav(p).samples
    assert np.max(np.abs(x - y)) <= 1 / 32768


def test_float32_round_trip(tmp_path):
    x = np.random.default_rng(1).uniform(-1, 1, (2, 501))
    save_wav(AudioClip(x), tmp_path / "f.wav", "float32")
    y = load_wav(tmp_path / "f.wav").samples
    assert np.array_equal(y, x.astype(np.float32).astype(np.float64))


def test_truncated_file_names_data_chunk(tmp_path):
    p = tmp_path / "t.wav"
    save_wav(AudioClip(np.zeros((2, 100))), p)
    p.write_bytes(p.read_bytes()[:-50])
    with pytest.raises(WavError) as err:
        load_wav(p)
    assert err.value.chunk == "data"
    assert "data" in str(err.value)


def test_missing_fmt_chunk(tmp_path):
    p = tmp_path / "n.wav"
    body = b"WAVE" + b"data" + struct.pack("<I", 4) + b"\0\0\0\0"
    p.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(WavError) as err:
        load_wav(p)
    assert err.value.chunk == "fmt "


@pytest.mark.parametrize("payload", [b"", b"RIFX0000WAVE", b"RIFF\0\0\0\0AVI "])
def test_bad_header(tmp_path, payload):
    p = tmp_path / "h.wav"
    p.write_bytes(payload)
    with pytest.raises(WavError) as err:
        load_wav(p)
    assert err.value.chunk == "RIFF"


def test_wrong_sample_rate(tmp_path):
    p = tmp_path / "s.wav"
    _pcm16_file(p, [0, 0], rate=48000)
    with pytest.raises(WavError, match="48000"):
        load_wav(p)


def test_unsupported_encoding(tmp_path):
    p = tmp_path / "u.wav"
    fmt = struct.pack("<HHIIHH", 1, 2, 44100, 44100 * 6, 6, 24)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", 6) + bytes(6)
    p.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(WavError, match="unsupported encoding"):
        load_wav(p)


def test_clip_shape_validation():
    with pytest.raises(ValueError):
        AudioClip(np.zeros((3, 10)))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert AudioClip(np.zeros(5)).samples.shape == (2, 5)
