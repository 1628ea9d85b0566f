import numpy as np
import pytest

from acousticpose import autodiff as ad
from acousticpose import tensorio, wavio


@pytest.mark.parametrize("channels", [1, 2, 4])
def test_float32_wav_round_trip(tmp_path, rng, channels):
    data = rng.uniform(-1, 1, size=(480, channels))
    path = tmp_path / "clip.wav"
    wavio.write_wav(str(path), data, 48000, encoding="float32")
    back, sr = wavio.read_wav(str(path))
    assert sr == 48000
    assert back.shape == (480, channels)
    np.testing.assert_allclose(back, data.astype(np.float32), atol=0)


def test_pcm16_wav_round_trip(tmp_path, rng):
    data = rng.uniform(-0.9, 0.9, size=(1000, 2))
    path = tmp_path / "clip.wav"
    wavio.write_wav(str(path), data, 44100, encoding="pcm16")
    back, sr = wavio.read_wav(str(path))
    assert sr == 44100
    np.testing.assert_allclose(back, data, atol=1.0 / 32767)


def test_pcm24_wav_round_trip(tmp_path, rng):
    data = rng.uniform(-0.9, 0.9, size=(777, 1))
    path = tmp_path / "clip.wav"
    wavio.write_wav(str(path), data, 48000, encoding="pcm24")
    back, _ = wavio.read_wav(str(path))
    np.testing.assert_allclose(back, data, atol=1.0 / (2**23 - 1))


def test_wav_rejects_unknown_encoding(tmp_path):
    with pytest.raises(ValueError):
        wavio.write_wav(str(tmp_path / "x.wav"), np.zeros((10, 1)), 48000,
                        encoding="pcm8")


def test_wav_rejects_garbage_file(tmp_path):
    path = tmp_path / "broken.wav"
    path.write_bytes(b"RIFFxxxxNOPE")
    with pytest.raises(ValueError):
        wavio.read_wav(str(path))


def test_tensor_round_trip_with_metadata(tmp_path, rng):
    arr = rng.normal(size=(3, 5, 2)).astype(np.float32)
    path = tmp_path / "feat.bin"
    tensorio.save_tensor(str(path), arr, channel_layout=["a", "b", "c"])
    back, info = tensorio.load_tensor(str(path))
    np.testing.assert_array_equal(back, arr)
    assert info["channel_layout"] == ["a", "b", "c"]
    assert info["shape"] == [3, 5, 2]


def test_tensor_detects_truncation(tmp_path, rng):
    arr = rng.normal(size=(4, 4))
    path = tmp_path / "t.bin"
    tensorio.save_tensor(str(path), arr)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        tensorio.load_tensor(str(path))


def test_checkpoint_round_trip(tmp_path, rng):
    named = {
        "fa/conv.w": ad.Tensor(rng.normal(size=(4, 3, 2)), requires_grad=True),
        "head.b": ad.Tensor(rng.normal(size=7), requires_grad=True),
    }
    path = tmp_path / "ckpt.bin"
    ad.save_checkpoint(str(path), {k: v.data for k, v in named.items()},
                       meta={"epoch": 3})
    tensors, meta = ad.load_checkpoint(str(path))
    assert meta["epoch"] == 3
    assert set(tensors) == set(named)
    for k in named:
        np.testing.assert_array_equal(tensors[k], named[k].data)
