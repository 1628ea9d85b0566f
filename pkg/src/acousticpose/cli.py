"""Command line entry point.

Subcommands cover the full experiment loop:

    acousticpose simulate  --out runs/data [--config run.toml] [--bgm-kind chirp]
    acousticpose featurize runs/data [--out runs/feats]
    acousticpose train     runs/feats --out runs/train [--epochs N] [--resume CKPT]
    acousticpose eval      runs/feats --checkpoint runs/train/best.bin --out runs/eval
    acousticpose gradcheck [--out runs/gradcheck]
    acousticpose pca-study --out runs/study

Every command that produces artifacts writes config.resolved.toml next to
them, so any output directory records the exact configuration that made it.
Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import accel
from . import autodiff as ad
from . import config as cfgmod
from . import features as featmod
from . import metrics, network, pca, roomsim, training, verify
from .bgm import KINDS as BGM_KINDS
from .bgm import BgmSpec
from .errors import ConfigError, DataError, NumericalError
from .features import FeatureSet
from .training import TrainingDiverged

GRADCHECK_TOL = 1e-4


def _load_config(args):
    if getattr(args, "config", None):
        try:
            cfg = cfgmod.load(args.config)
        except OSError as e:
            raise DataError(f"cannot read config: {e}") from e
    else:
        cfg = cfgmod.default_run_config()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _snapshot(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    cfgmod.save(cfg, os.path.join(out_dir, "config.resolved.toml"))


def _refuse_nonempty(out_dir, force):
    if force:
        return
    if os.path.isdir(out_dir) and os.listdir(out_dir):
        raise DataError(
            f"output directory {out_dir!r} is not empty; pass --force to overwrite"
        )


def _as_config_error(fn, *args, **kwargs):
    """Materialize config-derived objects; their ValueErrors are config errors."""
    try:
        return fn(*args, **kwargs)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _load_featureset(root):
    try:
        return FeatureSet(root)
    except ValueError as e:
        raise DataError(str(e)) from e
    except OSError as e:
        raise DataError(f"cannot read feature set at {root!r}: {e}") from e


def _check_model_matches_features(mcfg, featset):
    fc = featset.index["feature_config"]
    pairs = (("n_mels", mcfg.n_mels), ("window_frames", mcfg.window_frames))
    for key, want in pairs:
        if fc.get(key) != want:
            raise ConfigError(
                f"model expects {key}={want} but the feature set was built "
                f"with {key}={fc.get(key)}"
            )


def _single_bgm_config(cfg, bgm_id, spec):
    """One bgm id and no holdouts: both separability conditions then consume
    the master RNG identically, so clip seeds (and poses) line up."""
    dataset = dataclasses.replace(
        cfg.dataset, cross_music_holdout="", cross_genre_holdout=""
    )
    return dataclasses.replace(cfg, bgm={bgm_id: spec}, dataset=dataset)


def cmd_simulate(args):
    cfg = _load_config(args)
    if args.bgm_kind:
        spec = _as_config_error(BgmSpec, kind=args.bgm_kind)
        cfg = _single_bgm_config(cfg, args.bgm_kind, spec)
    plan = _as_config_error(cfg.plan)
    _refuse_nonempty(args.out, args.force)
    _snapshot(cfg, args.out)
    try:
        manifest = roomsim.build_dataset(
            args.out, cfg.scene, plan, seed=cfg.seed, threads=args.threads
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e
    print(f"wrote {len(manifest['records'])} clips to {args.out}")
    return 0


def cmd_featurize(args):
    cfg = _load_config(args)
    try:
        manifest = roomsim.load_manifest(args.dataset)
    except ValueError as e:
        raise DataError(str(e)) from e
    out = args.out
    if out is None:
        cache = os.environ.get("ACOUSTICPOSE_CACHE")
        if cache:
            name = os.path.basename(os.path.normpath(args.dataset))
            out = os.path.join(cache, name)
        else:
            out = os.path.join(args.dataset, "features")
    _refuse_nonempty(out, args.force)
    _snapshot(cfg, out)
    index = featmod.featurize_manifest(manifest, out, cfg.features)
    n_fail = len(index["failures"])
    print(f"wrote {index['n_windows']} windows to {out}")
    if n_fail:
        for item in index["failures"]:
            print(f"  failed {item['id']}: {item['error']}", file=sys.stderr)
        print(f"{n_fail} clip(s) failed; feature set is partial", file=sys.stderr)
        return 3
    return 0


def cmd_train(args):
    cfg = _load_config(args)
    if args.epochs is not None:
        cfg = dataclasses.replace(
            cfg, train=dataclasses.replace(cfg.train, epochs=args.epochs)
        )
    featset = _load_featureset(args.features)
    _check_model_matches_features(cfg.model, featset)
    model = _as_config_error(network.PoseModel, cfg.model, seed=cfg.seed)
    _snapshot(cfg, args.out)
    try:
        summary = training.fit(
            model, featset, cfg.train, args.out,
            start_checkpoint=args.resume,
        )
    except ValueError as e:
        raise DataError(str(e)) from e
    summary.pop("ema", None)
    with open(os.path.join(args.out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=1)
        f.write("\n")
    for w in summary["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    if summary.get("best_val_mae") is not None:
        print(f"best val mae {summary['best_val_mae']:.6g}")
    print(f"checkpoints in {args.out}")
    return 0


def _checkpoint_state(path, use_ema):
    try:
        tensors, meta = ad.load_checkpoint(path)
    except (OSError, ValueError, KeyError) as e:
        raise DataError(f"cannot load checkpoint {path!r}: {e}") from e
    prefix = "ema/" if use_ema else "param/"
    state = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
    if not state:
        raise DataError(f"checkpoint {path!r} holds no {prefix}* tensors")
    return state, meta


def cmd_eval(args):
    cfg = _load_config(args)
    split = args.split or cfg.eval.split
    protocol = cfg.eval.protocol
    featset = _load_featureset(args.features)
    idxs = featset.indices(protocol, split)
    if not idxs:
        raise DataError(f"no windows tagged {protocol}/{split}")

    extras = {"protocol": protocol, "split": split, "oracle": bool(args.oracle)}
    if args.oracle:
        gt = featset.poses(idxs)
        pred = gt.copy()
    else:
        if not args.checkpoint:
            raise ConfigError("--checkpoint is required unless --oracle is given")
        _check_model_matches_features(cfg.model, featset)
        model = _as_config_error(network.PoseModel, cfg.model, seed=cfg.seed)
        state, meta = _checkpoint_state(args.checkpoint, cfg.eval.use_ema)
        try:
            pred, gt = training.predict(
                model, featset, idxs, params_state=state,
                batch_size=cfg.eval.batch_size,
            )
        except (ValueError, KeyError) as e:
            raise DataError(f"checkpoint does not fit the model: {e}") from e
        extras["checkpoint"] = os.path.abspath(args.checkpoint)
        extras["checkpoint_epoch"] = meta.get("epoch")
        extras["ema"] = bool(cfg.eval.use_ema)

    train_idx = featset.indices(protocol, "train")
    if train_idx:
        base = metrics.baseline_report(featset.poses(train_idx), gt)
        extras["baseline"] = {
            "rmse": base.rmse, "mae": base.mae, "pckh05": base.pckh05,
        }

    report = metrics.evaluate_arrays(pred, gt, n_windows=len(idxs), extras=extras)
    _snapshot(cfg, args.out)
    metrics.write_report(report, args.out)
    line = (
        f"{protocol}/{split}: rmse {report.rmse:.6g}  mae {report.mae:.6g}  "
        f"pckh05 {report.pckh05:.4f}"
    )
    if "baseline" in extras:
        rel = 1.0 - report.mae / extras["baseline"]["mae"]
        line += f"  (mean-pose baseline mae {extras['baseline']['mae']:.6g}, "
        line += f"improvement {100 * rel:.1f}%)"
    print(line)
    return 0


def cmd_gradcheck(args):
    ad.set_default_dtype("float64")
    ops = verify.op_gradchecks(seed=args.seed if args.seed is not None else 0)
    full = verify.full_graph_gradcheck(seed=args.seed if args.seed is not None else 0)
    rows = ops + [("full_graph", full)]
    worst = max(err for _, err in rows)
    for name, err in rows:
        flag = "ok" if err < GRADCHECK_TOL else "FAIL"
        print(f"{name:<22s} {err:.3e}  {flag}")
    print(f"max relative error {worst:.3e} (tolerance {GRADCHECK_TOL:g})")
    if args.out:
        _snapshot(_load_config(args), args.out)
        with open(os.path.join(args.out, "gradcheck.json"), "w") as f:
            json.dump(
                {"results": {n: e for n, e in rows}, "max": worst,
                 "tolerance": GRADCHECK_TOL},
                f, indent=1,
            )
            f.write("\n")
    if worst >= GRADCHECK_TOL:
        raise NumericalError(f"gradient check failed: {worst:.3e} >= {GRADCHECK_TOL:g}")
    return 0


def _study_condition(cfg, label, bgm_id, spec, root, threads):
    """Simulate and featurize one sensing condition; returns its 2D report."""
    cond_cfg = _single_bgm_config(cfg, bgm_id, spec)
    cond_cfg = dataclasses.replace(
        cond_cfg,
        features=dataclasses.replace(cond_cfg.features, per_clip_standardize=True),
    )
    data_dir = os.path.join(root, label, "data")
    feat_dir = os.path.join(root, label, "features")
    _snapshot(cond_cfg, os.path.join(root, label))
    manifest = roomsim.build_dataset(
        data_dir, cond_cfg.scene, cond_cfg.plan(), seed=cond_cfg.seed,
        threads=threads,
    )
    index = featmod.featurize_manifest(manifest, feat_dir, cond_cfg.features)
    if index["failures"]:
        raise DataError(f"study condition {label!r}: featurization failures")
    featset = FeatureSet(feat_dir)
    idxs = list(range(len(featset)))
    x, _, _ = featset.arrays(idxs)
    report = pca.feature_pca(x, featset.motions(idxs))
    pca.write_pca_points(report, os.path.join(root, label, "pca_points.csv"))
    pca.svg_scatter(
        report, os.path.join(root, label, "scatter.svg"),
        title=f"{label} sensing",
    )
    return report


def cmd_pca_study(args):
    cfg = _load_config(args)
    if not cfg.bgm:
        raise ConfigError("config declares no bgm entries")
    _refuse_nonempty(args.out, args.force)
    os.makedirs(args.out, exist_ok=True)

    music_id = sorted(cfg.bgm)[0]
    try:
        bgm_rep = _study_condition(
            cfg, "bgm", music_id, cfg.bgm[music_id], args.out, args.threads
        )
        chirp_rep = _study_condition(
            cfg, "chirp", "chirp", BgmSpec(kind="chirp"), args.out, args.threads
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e

    summary = {
        "bgm_id": music_id,
        "silhouette_bgm": bgm_rep.silhouette,
        "silhouette_chirp": chirp_rep.silhouette,
        "clusters": bgm_rep.cluster_names(),
        "chirp_separates_better": chirp_rep.silhouette > bgm_rep.silhouette,
    }
    with open(os.path.join(args.out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=1)
        f.write("\n")
    print(f"silhouette under music ({music_id}): {bgm_rep.silhouette:.4f}")
    print(f"silhouette under chirp: {chirp_rep.silhouette:.4f}")
    if not summary["chirp_separates_better"]:
        print("warning: chirp sensing did not separate poses better", file=sys.stderr)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="acousticpose",
        description="Pose-from-audio laboratory: simulate, featurize, train, eval.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, help="cap worker threads")
    common.add_argument(
        "--f64", action="store_true",
        help="run model math in 64-bit floats (the default; pins it explicitly)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common],
                       help="render a synthetic dataset")
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--force", action="store_true",
                   help="write into a non-empty directory")
    p.add_argument("--bgm-kind", choices=BGM_KINDS,
                   help="replace the configured music with one generator kind")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("featurize", parents=[common],
                       help="turn a dataset into model-ready windows")
    p.add_argument("dataset", help="dataset directory or manifest.json")
    p.add_argument("--out",
                   help="feature directory (default: $ACOUSTICPOSE_CACHE/<name> "
                        "or <dataset>/features)")
    p.add_argument("--force", action="store_true",
                   help="write into a non-empty directory")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", parents=[common], help="train the pose model")
    p.add_argument("features", help="feature directory")
    p.add_argument("--out", required=True, help="run directory for checkpoints")
    p.add_argument("--epochs", type=int, help="override the configured epoch count")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common],
                       help="evaluate a checkpoint on a split")
    p.add_argument("features", help="feature directory")
    p.add_argument("--checkpoint", help="checkpoint file (best.bin / last.bin)")
    p.add_argument("--split", help="override the configured eval split")
    p.add_argument("--oracle", action="store_true",
                   help="score the ground truth against itself (harness check)")
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference check of every gradient")
    p.add_argument("--out", help="optional directory for gradcheck.json")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("pca-study", parents=[common],
                       help="pose separability under music vs chirp sensing")
    p.add_argument("--out", required=True, help="study directory")
    p.add_argument("--force", action="store_true",
                   help="write into a non-empty directory")
    p.set_defaults(func=cmd_pca_study)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.f64:
        ad.set_default_dtype("float64")
    if args.threads is not None:
        if args.threads < 1:
            parser.error("--threads must be at least 1")
        accel.set_threads(args.threads)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DataError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except (NumericalError, TrainingDiverged) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
