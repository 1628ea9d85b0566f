import dataclasses

import numpy as np
import pytest

from acousticpose import accel
from acousticpose import config as cfgmod
from acousticpose import features as featmod
from acousticpose import roomsim
from acousticpose.bgm import BgmSpec
from acousticpose.features import FeatureConfig, FeatureSet
from acousticpose.network import ModelConfig
from acousticpose.roomsim import DatasetPlan, SceneConfig


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(params=["numpy"] + (["numba"] if accel.NUMBA_AVAILABLE else []))
def backend(request):
    """Run the test once per available kernel backend."""
    old = accel.get_backend()
    accel.set_backend(request.param)
    yield request.param
    accel.set_backend(old)


@pytest.fixture
def numpy_backend():
    old = accel.get_backend()
    accel.set_backend("numpy")
    yield
    accel.set_backend(old)


def tiny_model_config(n_mels=32):
    return ModelConfig(
        n_mels=n_mels,
        latent_dim=8,
        pre_widths=(8,),
        post_widths=(8, 8),
        freq_strides=(4, 4),
        unet_width=8,
        head_hidden=8,
        cpe_dim=8,
    )


@pytest.fixture(name="tiny_model_config")
def tiny_model_config_fixture():
    return tiny_model_config()


def small_run_config():
    """Two ambient tracks, two motions, short clips: fast but structurally
    complete (both cross-protocol splits populated)."""
    cfg = cfgmod.RunConfig()
    cfg.seed = 5
    cfg.bgm = {
        "groove": BgmSpec(kind="ambient-like", base_freq=110.0),
        "pad": BgmSpec(kind="ambient-like", base_freq=160.0),
        "swing": BgmSpec(kind="jazz-like"),
    }
    cfg.dataset = DatasetPlan(
        motions=("still", "walk"),
        clips_per_pair=3,
        clip_duration_s=3.0,
        cross_music_holdout="pad",
        cross_genre_holdout="jazz-like",
    )
    cfg.features = FeatureConfig(n_mels=32)
    cfg.model = tiny_model_config()
    cfg.train = dataclasses.replace(
        cfg.train, batch_size=8, epochs=2, checkpoint_every=1
    )
    return cfg


@pytest.fixture(scope="session")
def small_cfg():
    return small_run_config()


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory, small_cfg):
    out = tmp_path_factory.mktemp("dataset")
    return roomsim.build_dataset(
        str(out), small_cfg.scene, small_cfg.plan(), seed=small_cfg.seed
    )


@pytest.fixture(scope="session")
def small_features_dir(tmp_path_factory, small_cfg, small_dataset):
    out = tmp_path_factory.mktemp("features")
    index = featmod.featurize_manifest(small_dataset, str(out), small_cfg.features)
    assert not index["failures"]
    return str(out)


@pytest.fixture(scope="session")
def small_featureset(small_features_dir):
    return FeatureSet(small_features_dir)


@pytest.fixture(scope="session")
def plain_scene():
    """Reference geometry used by the DSP-versus-simulator oracles."""
    return SceneConfig()
