"""Optimization harness: hard-negative batching, Adam, EMA, the epoch loop.

Batches are built so that every batch carries at least one pair of windows
sensed with the same BGM whenever the pool allows it; the contrastive term
then has to separate poses rather than music. Evaluation always runs on the
EMA copy of the parameters.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses, metrics


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 30
    lr_max: float = 0.003
    lr_min: float = 0.001
    ema_decay: float = 0.999
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    w_alpha: float = 100.0
    w_beta: float = 1.0
    tau: float = 0.07
    seed: int = 0
    protocol: str = "single_music"
    group_size: int = 2  # same-BGM windows placed together per batch
    checkpoint_every: int = 10

    def __post_init__(self):
        if not (self.lr_max >= self.lr_min > 0):
            raise ValueError("need lr_max >= lr_min > 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 for the contrastive term")
        if not (0.0 <= self.ema_decay <= 1.0):
            raise ValueError("ema_decay must be in [0, 1]")

    def weights(self):
        return losses.LossWeights(self.w_alpha, self.w_beta, self.tau)


def cosine_lr(step, total_steps, lr_max, lr_min):
    """lr_max at step 0, lr_min at the final step, cosine in between."""
    if total_steps <= 0:
        return lr_min
    frac = min(max(step / total_steps, 0.0), 1.0)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * frac))


def hard_negative_batches(bgm_ids, batch_size, seed, group_size=2):
    """Partition window indices into batches with same-BGM pairs co-located.

    Each batch is seeded with group_size windows drawn from one BGM pool
    (when a pool still holds >= 2), then filled from random pools. Every
    index appears exactly once. Returns (batches, warnings).
    """
    rng = np.random.default_rng(seed)
    pools = {}
    for i, bid in enumerate(bgm_ids):
        pools.setdefault(bid, []).append(i)
    for bid in pools:
        pools[bid] = list(rng.permutation(pools[bid]))

    warnings = []
    n_total = len(bgm_ids)
    if n_total < batch_size:
        warnings.append(
            f"dataset of {n_total} windows is smaller than batch size {batch_size}"
        )
    batches = []
    remaining = n_total
    while remaining > 0:
        size = min(batch_size, remaining)
        batch = []
        rich = sorted(bid for bid, pool in pools.items() if len(pool) >= 2)
        if rich:
            bid = rich[rng.integers(len(rich))]
            take = min(group_size, len(pools[bid]), size)
            for _ in range(take):
                batch.append(pools[bid].pop())
        else:
            warnings.append("no BGM pool with >= 2 windows left; batch lacks a pair")
        while len(batch) < size:
            avail = sorted(bid for bid, pool in pools.items() if pool)
            bid = avail[rng.integers(len(avail))]
            batch.append(pools[bid].pop())
        rng.shuffle(batch)
        batches.append(batch)
        remaining -= size
    return batches, warnings


def adam_init(params):
    return {
        "step": 0,
        "m": {name: np.zeros_like(p.data) for name, p in params.items()},
        "v": {name: np.zeros_like(p.data) for name, p in params.items()},
    }


def adam_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8):
    """Standard Adam with bias correction. NaN/Inf gradients reject the step.

    Returns True when the step was applied.
    """
    for g in grads.values():
        if g is None or not np.all(np.isfinite(g)):
            return False
    b1, b2 = betas
    state["step"] += 1
    t = state["step"]
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        m = state["m"][name]
        v = state["v"][name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return True


def ema_init(params):
    return {name: np.array(p.data, copy=True) for name, p in params.items()}


def ema_update(shadow, params, decay):
    if set(shadow) != set(
        params if isinstance(params, dict) else dict(params)
    ):
        raise ValueError("EMA shadow and parameter names do not match")
    for name, p in params.items():
        shadow[name] = decay * shadow[name] + (1.0 - decay) * p.data
    return shadow


class _swap_params:
    """Temporarily load a named-array state into the model's parameters."""

    def __init__(self, model, state):
        self.model = model
        self.state = state

    def __enter__(self):
        self.saved = {name: p.data for name, p in self.model.named_parameters()}
        dtype = ad.get_default_dtype()
        for name, p in self.model.named_parameters():
            p.data = np.asarray(self.state[name], dtype=dtype)
        return self.model

    def __exit__(self, *exc):
        for name, p in self.model.named_parameters():
            p.data = self.saved[name]
        return False


def predict(model, featset, idxs, params_state=None, batch_size=64):
    """Run the model over windows under no_grad. Returns (pred, gt) arrays."""
    dtype = ad.get_default_dtype()
    preds, gts = [], []
    ctx = _swap_params(model, params_state) if params_state is not None else None
    if ctx is not None:
        ctx.__enter__()
    try:
        with ad.no_grad():
            for lo in range(0, len(idxs), batch_size):
                chunk = idxs[lo : lo + batch_size]
                x, m, p = featset.arrays(chunk, dtype=dtype)
                out = model(ad.Tensor(x), ad.Tensor(m))
                preds.append(np.array(out["pose"].data, copy=True))
                gts.append(p)
    finally:
        if ctx is not None:
            ctx.__exit__()
    return np.concatenate(preds), np.concatenate(gts)


def fit(model, featset, tcfg, out_dir, start_checkpoint=None, quiet=False):
    """Train on the tcfg.protocol train split; validate on its val split.

    Writes log.csv, periodic checkpoints, best.bin (lowest validation MAE on
    EMA weights), and last.bin. Returns a summary dict. Deterministic given
    (model init, feature set, config) in 64-bit mode; resuming from a
    checkpoint continues the same trajectory.
    """
    os.makedirs(out_dir, exist_ok=True)
    params = dict(model.named_parameters())
    train_idx = featset.indices(tcfg.protocol, "train")
    val_idx = featset.indices(tcfg.protocol, "val")
    if not train_idx:
        raise ValueError(f"no train windows for protocol {tcfg.protocol!r}")
    train_bgms = featset.bgm_ids(train_idx)
    weights = tcfg.weights()

    state = adam_init(params)
    ema = ema_init(params)
    start_epoch = 0
    if start_checkpoint is not None:
        tensors, meta = ad.load_checkpoint(start_checkpoint)
        model.load_state_dict(
            {k[len("param/") :]: v for k, v in tensors.items() if k.startswith("param/")}
        )
        ema = {k[len("ema/") :]: np.array(v) for k, v in tensors.items() if k.startswith("ema/")}
        state["m"] = {
            k[len("adam_m/") :]: np.array(v)
            for k, v in tensors.items()
            if k.startswith("adam_m/")
        }
        state["v"] = {
            k[len("adam_v/") :]: np.array(v)
            for k, v in tensors.items()
            if k.startswith("adam_v/")
        }
        state["step"] = int(meta["adam_step"])
        start_epoch = int(meta["epoch"]) + 1

    # Batch count is stable across epochs, so the schedule length is exact.
    n_batches = -(-len(train_idx) // tcfg.batch_size)
    total_steps = tcfg.epochs * n_batches
    global_step = start_epoch * n_batches

    log_path = os.path.join(out_dir, "log.csv")
    new_log = not (start_checkpoint and os.path.exists(log_path))
    log_f = open(log_path, "w" if new_log else "a", newline="")
    logger = csv.writer(log_f)
    if new_log:
        logger.writerow(
            ["epoch", "step", "lr", "l_pose", "l_smooth", "l_cpe", "l_total",
             "val_rmse", "val_mae"]
        )

    def save(path, epoch):
        named = {}
        for name, p in params.items():
            named[f"param/{name}"] = p.data
        for name, arr in ema.items():
            named[f"ema/{name}"] = arr
        for name, arr in state["m"].items():
            named[f"adam_m/{name}"] = arr
        for name, arr in state["v"].items():
            named[f"adam_v/{name}"] = arr
        ad.save_checkpoint(
            path, named,
            meta={"epoch": epoch, "adam_step": state["step"],
                  "global_step": global_step},
        )

    best_mae = np.inf
    summary = {"epochs": [], "warnings": []}
    dtype = ad.get_default_dtype()

    if tcfg.epochs == 0:
        save(os.path.join(out_dir, "last.bin"), -1)
        log_f.close()
        summary["final_train_loss"] = None
        return summary

    for epoch in range(start_epoch, tcfg.epochs):
        batches, warns = hard_negative_batches(
            train_bgms, tcfg.batch_size, seed=[tcfg.seed, epoch],
            group_size=tcfg.group_size,
        )
        summary["warnings"].extend(warns)
        epoch_losses = []
        for local in batches:
            batch_idx = [train_idx[i] for i in local]
            x, m, p = featset.arrays(batch_idx, dtype=dtype)
            xt, mt, pt = ad.Tensor(x), ad.Tensor(m), ad.Tensor(p)
            out = model(xt, mt)
            l_pose = losses.pose_loss(out["pose"], pt)
            l_smooth = losses.smooth_loss(out["pose"], pt)
            if tcfg.w_beta > 0 and len(batch_idx) >= 2:
                z_pose = model.encode_pose(pt)
                l_cpe = losses.contrastive_loss(z_pose, out["z_audio"], tcfg.tau)
            else:
                l_cpe = None
            loss = losses.total_loss(l_pose, l_smooth, l_cpe, weights)
            if not np.isfinite(loss.data):
                save(os.path.join(out_dir, "diverged.bin"), epoch)
                log_f.close()
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} step {global_step}; "
                    f"diagnostic checkpoint written to {out_dir}/diverged.bin"
                )
            model.zero_grad()
            loss.backward()
            lr = cosine_lr(global_step, total_steps, tcfg.lr_max, tcfg.lr_min)
            grads = {name: p.grad for name, p in params.items()}
            applied = adam_step(
                params, grads, state, lr,
                betas=(tcfg.beta1, tcfg.beta2), eps=tcfg.adam_eps,
            )
            if not applied:
                summary["warnings"].append(
                    f"step {global_step}: non-finite gradient, step rejected"
                )
            ema_update(ema, params, tcfg.ema_decay)
            row = [
                epoch, global_step, f"{lr:.6g}",
                f"{float(l_pose.data):.8g}", f"{float(l_smooth.data):.8g}",
                f"{float(l_cpe.data):.8g}" if l_cpe is not None else "",
                f"{float(loss.data):.8g}", "", "",
            ]
            logger.writerow(row)
            epoch_losses.append(
                [float(l_pose.data), float(l_smooth.data),
                 float(l_cpe.data) if l_cpe is not None else 0.0,
                 float(loss.data)]
            )
            global_step += 1

        ep = dict(zip(["l_pose", "l_smooth", "l_cpe", "l_total"],
                      np.mean(epoch_losses, axis=0).tolist()))
        ep["epoch"] = epoch
        if val_idx:
            pred, gt = predict(model, featset, val_idx, params_state=ema,
                               batch_size=tcfg.batch_size)
            rep = metrics.joint_errors(pred, gt)
            ep["val_rmse"] = rep["rmse"]
            ep["val_mae"] = rep["mae"]
            logger.writerow(
                [epoch, global_step, "", "", "", "", "",
                 f"{rep['rmse']:.8g}", f"{rep['mae']:.8g}"]
            )
            if rep["mae"] < best_mae:
                best_mae = rep["mae"]
                save(os.path.join(out_dir, "best.bin"), epoch)
        summary["epochs"].append(ep)
        if not quiet:
            val_part = (
                f" val_mae={ep['val_mae']:.4f}" if "val_mae" in ep else ""
            )
            print(
                f"epoch {epoch}: pose={ep['l_pose']:.5f} smooth={ep['l_smooth']:.5f} "
                f"cpe={ep['l_cpe']:.5f} total={ep['l_total']:.5f}{val_part}"
            )
        if (epoch + 1) % tcfg.checkpoint_every == 0:
            save(os.path.join(out_dir, f"epoch{epoch:04d}.bin"), epoch)

    save(os.path.join(out_dir, "last.bin"), tcfg.epochs - 1)
    log_f.close()
    summary["final_train_loss"] = summary["epochs"][-1]["l_total"]
    summary["best_val_mae"] = None if not val_idx else best_mae
    summary["ema"] = ema
    return summary
