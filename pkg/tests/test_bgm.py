import numpy as np
import pytest

from acousticpose import dsp, wavio
from acousticpose.bgm import KINDS, BgmSpec, longest_silence_s, synth_bgm

SR = 48000


@pytest.mark.parametrize("kind", ["ambient-like", "jazz-like", "chirp"])
def test_synth_is_deterministic_and_bounded(kind):
    spec = BgmSpec(kind=kind)
    a = synth_bgm(spec, 2.0, seed=9)
    b = synth_bgm(spec, 2.0, seed=9)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (2 * SR, 2)
    assert np.abs(a).max() <= 1.0


def test_stereo_channels_differ():
    for kind in ("ambient-like", "jazz-like", "chirp"):
        clip = synth_bgm(BgmSpec(kind=kind), 2.0, seed=1)
        assert np.abs(clip[:, 0] - clip[:, 1]).max() > 1e-3, kind


def test_ambient_stays_present_for_a_minute():
    clip = synth_bgm(BgmSpec(kind="ambient-like"), 60.0, seed=3)
    rms = float(np.sqrt((clip**2).mean()))
    assert 0.05 <= rms <= 0.5
    assert longest_silence_s(clip) <= 1.0


def test_jazz_like_contains_silence_gaps():
    clip = synth_bgm(BgmSpec(kind="jazz-like"), 20.0, seed=3)
    assert longest_silence_s(clip) > 0.05


def test_chirp_sweeps_and_repeats():
    period = 0.5
    spec = BgmSpec(kind="chirp", chirp_period_s=period)
    clip = synth_bgm(spec, 2.0, seed=0)
    left = clip[:, 0]
    n_fft, hop = 1024, 240
    grid = np.abs(dsp.stft(left, n_fft=n_fft, hop=hop))
    freqs = np.arange(grid.shape[0]) * SR / n_fft
    peak = freqs[np.argmax(grid, axis=0)]
    frames_per_period = int(period * SR / hop)
    # within one period the ridge climbs by a wide margin
    early = peak[2]
    late = peak[frames_per_period - 8]
    assert late > early + 1000.0
    # and the pattern repeats period over period
    for t in range(4, frames_per_period - 12, 11):
        assert abs(peak[t] - peak[t + frames_per_period]) < 500.0


def test_wav_file_kind_reads_resamples_and_tiles(tmp_path):
    t = np.arange(22050) / 44100
    stereo = np.stack([np.sin(2 * np.pi * 330 * t), np.sin(2 * np.pi * 220 * t)],
                      axis=1)
    path = tmp_path / "loop.wav"
    wavio.write_wav(str(path), 0.7 * stereo, 44100, encoding="pcm16")
    spec = BgmSpec(kind="wav-file", path=str(path))
    clip = synth_bgm(spec, 2.0, seed=0)  # longer than the 0.5 s source
    assert clip.shape == (2 * SR, 2)
    assert np.abs(clip).max() <= 1.0
    assert float(np.sqrt((clip**2).mean())) > 0.05


def test_wav_file_kind_requires_path():
    with pytest.raises(ValueError):
        BgmSpec(kind="wav-file")


def test_unknown_kind_rejected():
    assert set(KINDS) == {"ambient-like", "jazz-like", "chirp", "wav-file"}
    with pytest.raises(ValueError):
        BgmSpec(kind="metal")


def test_duration_must_be_positive():
    with pytest.raises(ValueError):
        synth_bgm(BgmSpec(kind="chirp"), 0.0, seed=0)
