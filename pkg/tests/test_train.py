import dataclasses

import numpy as np
import pytest

from acousticpose import autodiff as ad
from acousticpose import training
from acousticpose.network import PoseModel
from acousticpose.training import (
    TrainConfig,
    TrainingDiverged,
    adam_init,
    adam_step,
    cosine_lr,
    ema_init,
    ema_update,
    fit,
    hard_negative_batches,
)

from conftest import tiny_model_config


def test_train_config_validation():
    TrainConfig()
    with pytest.raises(ValueError):
        TrainConfig(lr_max=0.001, lr_min=0.003)
    with pytest.raises(ValueError):
        TrainConfig(lr_min=0.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)
    with pytest.raises(ValueError):
        TrainConfig(ema_decay=1.5)


def test_cosine_schedule_endpoints_and_midpoint():
    assert cosine_lr(0, 100, 0.003, 0.001) == pytest.approx(0.003, abs=1e-12)
    assert cosine_lr(100, 100, 0.003, 0.001) == pytest.approx(0.001, abs=1e-12)
    assert cosine_lr(50, 100, 0.003, 0.001) == pytest.approx(0.002, abs=1e-12)
    # monotone non-increasing along the run
    lrs = [cosine_lr(s, 100, 0.003, 0.001) for s in range(101)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    # past the end it clamps
    assert cosine_lr(250, 100, 0.003, 0.001) == pytest.approx(0.001, abs=1e-12)


def _reference_adam(params, grads, m, v, t, lr, b1, b2, eps):
    """Textbook per-element Adam used as an independent check."""
    out = {}
    for k in params:
        m[k] = b1 * m[k] + (1 - b1) * grads[k]
        v[k] = b2 * v[k] + (1 - b2) * grads[k] ** 2
        mhat = m[k] / (1 - b1**t)
        vhat = v[k] / (1 - b2**t)
        out[k] = params[k] - lr * mhat / (np.sqrt(vhat) + eps)
    return out


def test_adam_matches_reference_over_ten_steps(rng):
    names = ["a", "b"]
    params = {k: ad.Tensor(rng.normal(size=(3, 2)), requires_grad=True) for k in names}
    ref = {k: params[k].data.copy() for k in names}
    state = adam_init(params)
    m = {k: np.zeros((3, 2)) for k in names}
    v = {k: np.zeros((3, 2)) for k in names}
    for t in range(1, 11):
        grads = {k: rng.normal(size=(3, 2)) for k in names}
        applied = adam_step(params, grads, state, lr=0.01)
        assert applied
        ref = _reference_adam(ref, grads, m, v, t, 0.01, 0.9, 0.999, 1e-8)
        for k in names:
            np.testing.assert_allclose(params[k].data, ref[k], atol=1e-12)


def test_adam_rejects_non_finite_gradients(rng):
    params = {"w": ad.Tensor(rng.normal(size=(4,)), requires_grad=True)}
    before = params["w"].data.copy()
    state = adam_init(params)
    for bad in (np.array([1.0, np.nan, 0.0, 0.0]),
                np.array([np.inf, 0.0, 0.0, 0.0]),
                None):
        applied = adam_step(params, {"w": bad}, state, lr=0.1)
        assert not applied
        np.testing.assert_array_equal(params["w"].data, before)
        assert state["step"] == 0


def test_ema_fixtures(rng):
    params = {"w": ad.Tensor(rng.normal(size=(5,)), requires_grad=True)}
    init = params["w"].data.copy()

    shadow = ema_init(params)
    params["w"].data = params["w"].data + 1.0
    ema_update(shadow, params, decay=1.0)
    np.testing.assert_array_equal(shadow["w"], init)  # frozen

    shadow = ema_init(params)
    params["w"].data = params["w"].data + 1.0
    ema_update(shadow, params, decay=0.0)
    np.testing.assert_array_equal(shadow["w"], params["w"].data)  # copies

    # decay 0.999: after k updates against a constant target, the gap to the
    # target shrinks by 0.999^k
    shadow = {"w": np.zeros(3)}
    target = {"w": ad.Tensor(np.ones(3), requires_grad=True)}
    for _ in range(10):
        ema_update(shadow, target, decay=0.999)
    np.testing.assert_allclose(shadow["w"], 1.0 - 0.999**10, atol=1e-12)


def test_ema_rejects_name_mismatch(rng):
    params = {"w": ad.Tensor(np.zeros(3), requires_grad=True)}
    with pytest.raises(ValueError):
        ema_update({"other": np.zeros(3)}, params, decay=0.9)


def test_hard_negative_batches_partition(rng):
    bgm_ids = ["a"] * 10 + ["b"] * 7 + ["c"] * 3
    batches, warns = hard_negative_batches(bgm_ids, batch_size=8, seed=0)
    flat = [i for b in batches for i in b]
    assert sorted(flat) == list(range(20))
    assert [len(b) for b in batches] == [8, 8, 4]
    assert not warns


def test_hard_negative_batches_contain_same_bgm_pair():
    bgm_ids = ["a"] * 12 + ["b"] * 12
    for seed in range(5):
        batches, _ = hard_negative_batches(bgm_ids, batch_size=6, seed=seed)
        for batch in batches:
            ids = [bgm_ids[i] for i in batch]
            assert any(ids.count(u) >= 2 for u in set(ids))


def test_hard_negative_batches_deterministic():
    bgm_ids = ["a"] * 9 + ["b"] * 9
    one, _ = hard_negative_batches(bgm_ids, batch_size=4, seed=3)
    two, _ = hard_negative_batches(bgm_ids, batch_size=4, seed=3)
    other, _ = hard_negative_batches(bgm_ids, batch_size=4, seed=4)
    assert one == two
    assert one != other


def test_hard_negative_batches_small_dataset_warns():
    _, warns = hard_negative_batches(["a", "b"], batch_size=16, seed=0)
    assert any("smaller than batch size" in w for w in warns)


@pytest.fixture(scope="module")
def fitted(tmp_path_factory, small_featureset):
    """One short real fit shared by the smoke assertions below."""
    out = tmp_path_factory.mktemp("fit")
    model = PoseModel(tiny_model_config(), seed=0)
    tcfg = TrainConfig(batch_size=8, epochs=2, seed=0, checkpoint_every=1)
    summary = fit(model, small_featureset, tcfg, str(out), quiet=True)
    return out, model, tcfg, summary


def test_fit_writes_expected_artifacts(fitted):
    out, _, _, summary = fitted
    for name in ("log.csv", "best.bin", "last.bin", "epoch0000.bin"):
        assert (out / name).exists(), name
    assert len(summary["epochs"]) == 2
    assert summary["best_val_mae"] is not None
    assert np.isfinite(summary["final_train_loss"])


def test_fit_logs_every_step(fitted, small_featureset):
    out, _, tcfg, summary = fitted
    n_train = len(small_featureset.indices(tcfg.protocol, "train"))
    n_batches = -(-n_train // tcfg.batch_size)
    lines = (out / "log.csv").read_text().strip().splitlines()
    # header + per-step rows + one val row per epoch
    assert len(lines) == 1 + tcfg.epochs * (n_batches + 1)


def test_fit_epochs_zero_saves_initial_state(tmp_path, small_featureset):
    model = PoseModel(tiny_model_config(), seed=0)
    tcfg = TrainConfig(batch_size=8, epochs=0, seed=0)
    summary = fit(model, small_featureset, tcfg, str(tmp_path), quiet=True)
    assert (tmp_path / "last.bin").exists()
    assert summary["final_train_loss"] is None
    tensors, meta = ad.load_checkpoint(str(tmp_path / "last.bin"))
    assert meta["epoch"] == -1
    ref = PoseModel(tiny_model_config(), seed=0)
    for name, p in ref.named_parameters():
        np.testing.assert_array_equal(tensors[f"param/{name}"], p.data)


def test_fit_unknown_protocol_errors(tmp_path, small_featureset):
    model = PoseModel(tiny_model_config(), seed=0)
    tcfg = TrainConfig(batch_size=8, epochs=1, protocol="nope")
    with pytest.raises(ValueError):
        fit(model, small_featureset, tcfg, str(tmp_path), quiet=True)


def test_resume_reproduces_straight_run(tmp_path, small_featureset, numpy_backend):
    """Resuming a run from its own mid-run checkpoint, under the same config,
    lands on bit-identical final weights. (The lr schedule spans the full
    epoch budget, so the resumed run must share that horizon.)"""
    tcfg = TrainConfig(batch_size=8, epochs=2, seed=11, checkpoint_every=1)

    straight_dir = tmp_path / "straight"
    model_a = PoseModel(tiny_model_config(), seed=3)
    fit(model_a, small_featureset, tcfg, str(straight_dir), quiet=True)

    resume_dir = tmp_path / "resumed"
    model_c = PoseModel(tiny_model_config(), seed=99)  # init is overwritten
    fit(model_c, small_featureset, tcfg, str(resume_dir),
        start_checkpoint=str(straight_dir / "epoch0000.bin"), quiet=True)

    a, _ = ad.load_checkpoint(str(straight_dir / "last.bin"))
    c, _ = ad.load_checkpoint(str(resume_dir / "last.bin"))
    assert set(a) == set(c)
    for k in a:
        np.testing.assert_array_equal(a[k], c[k])


def test_contrastive_weight_changes_trajectory(tmp_path, small_featureset, numpy_backend):
    base = TrainConfig(batch_size=8, epochs=1, seed=2)
    with_dir = tmp_path / "with_cpe"
    without_dir = tmp_path / "without_cpe"
    m1 = PoseModel(tiny_model_config(), seed=4)
    fit(m1, small_featureset, base, str(with_dir), quiet=True)
    m2 = PoseModel(tiny_model_config(), seed=4)
    fit(m2, small_featureset, dataclasses.replace(base, w_beta=0.0),
        str(without_dir), quiet=True)
    a, _ = ad.load_checkpoint(str(with_dir / "last.bin"))
    b, _ = ad.load_checkpoint(str(without_dir / "last.bin"))
    assert any(not np.array_equal(a[k], b[k]) for k in a)


def test_diverged_loss_writes_diagnostic(tmp_path, small_featureset):
    model = PoseModel(tiny_model_config(), seed=0)
    # poison one weight so the first forward pass goes non-finite
    model.head_out.w.data[:] = np.inf
    tcfg = TrainConfig(batch_size=8, epochs=1, seed=0)
    with pytest.raises(TrainingDiverged):
        fit(model, small_featureset, tcfg, str(tmp_path), quiet=True)
    assert (tmp_path / "diverged.bin").exists()


def test_predict_matches_manual_forward(small_featureset):
    model = PoseModel(tiny_model_config(), seed=0)
    idxs = small_featureset.indices("single_music", "val")[:4]
    pred, gt = training.predict(model, small_featureset, idxs)
    x, m, p = small_featureset.arrays(idxs)
    with ad.no_grad():
        expected = model(ad.Tensor(x), ad.Tensor(m))["pose"].data
    np.testing.assert_array_equal(pred, expected)
    np.testing.assert_array_equal(gt, p)


def test_predict_with_swapped_state_restores_params(small_featureset):
    model = PoseModel(tiny_model_config(), seed=0)
    before = {n: p.data.copy() for n, p in model.named_parameters()}
    zeros = {n: np.zeros_like(p.data) for n, p in model.named_parameters()}
    idxs = small_featureset.indices("single_music", "val")[:2]
    pred, _ = training.predict(model, small_featureset, idxs, params_state=zeros)
    # zero weights zero the head, so the pose output is the head bias: zero
    np.testing.assert_array_equal(pred, 0.0)
    for n, p in model.named_parameters():
        np.testing.assert_array_equal(p.data, before[n])
