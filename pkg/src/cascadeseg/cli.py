"""Command-line shell over the library.

Every subcommand is a thin wrapper around public functions, so anything run
here can be reproduced in a few lines of Python.  Exit codes: 0 success,
1 usage error, 2 runtime error.  ``CASCADE_SEG_THREADS`` caps BLAS worker
threads for the whole invocation.
"""

from __future__ import annotations

import argparse
import dataclasses
import glob
import os
import sys

import numpy as np

from .cascade import CascadeConfig, body_mask, curve_text, radius_curve
from .errors import EngineError, FormatError
from .gradcheck import OPS, gradcheck_op
from .metrics import dice_table
from .mhd import read_volume, write_volume
from .network import build, load_checkpoint, param_count, save_checkpoint
from .phantom import PhantomSpec, generate_dataset
from .runconfig import load_config
from .tiler import plan_tiles, predict_volume, two_stage_predict
from .trainer import finetune, split_dataset, stage1_cases, stage2_cases, train
from .volume import BinaryMask, LabelVolume, Volume3

GRAD_TOLERANCE = 1e-4


def _require_image(vol, command: str) -> Volume3:
    if not isinstance(vol, Volume3):
        raise FormatError(f"{command} needs a scalar image, got a label volume")
    return vol


def _require_labels(vol, command: str) -> LabelVolume:
    if not isinstance(vol, LabelVolume):
        raise FormatError(f"{command} needs a MET_UCHAR label volume")
    return vol


def _load_pairs(data_dir: str) -> list:
    images = sorted(glob.glob(os.path.join(data_dir, "*_image.mhd")))
    if not images:
        raise FormatError(f"no *_image.mhd cases under {data_dir}")
    pairs = []
    for image_path in images:
        label_path = image_path[: -len("_image.mhd")] + "_labels.mhd"
        if not os.path.exists(label_path):
            raise FormatError(f"missing labels for {image_path}")
        pairs.append(
            (
                _require_image(read_volume(image_path), "train"),
                _require_labels(read_volume(label_path), "train"),
            )
        )
    return pairs


def _write_probs(probs: np.ndarray, spacing, prefix: str) -> None:
    for k in range(probs.shape[0]):
        write_volume(Volume3(probs[k], spacing), f"{prefix}_class{k}.mhd")


def _train_config(args):
    cfg = load_config(args.config)
    train_cfg = cfg.train
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    return cfg, train_cfg


def _write_history(result, path) -> None:
    if path:
        with open(path, "w", encoding="ascii") as f:
            f.write(result.history_text())


def _cmd_synth(args) -> int:
    spec = PhantomSpec(
        dims=tuple(args.dims),
        include_organs=not args.no_organs,
        include_vessel=not args.no_vessel,
        noise_std=args.noise,
        seed=args.seed,
    )
    os.makedirs(args.out, exist_ok=True)
    pairs = generate_dataset(spec, args.cases, seed=args.seed)
    for i, (vol, labels) in enumerate(pairs):
        write_volume(vol, os.path.join(args.out, f"case_{i:03d}_image.mhd"))
        write_volume(labels, os.path.join(args.out, f"case_{i:03d}_labels.mhd"))
    print(f"wrote {len(pairs)} cases ({spec.num_classes} classes) to {args.out}")
    return 0


def _cmd_bodymask(args) -> int:
    ct = _require_image(read_volume(args.image), "bodymask")
    region = body_mask(ct, CascadeConfig(body_threshold=args.threshold))
    write_volume(region.mask, args.out)
    print(f"body mask covers {region.voxel_fraction:.4f} of the volume")
    return 0


def _cmd_train(args) -> int:
    if args.stage == 2 and not args.stage1_model:
        print("cascadeseg train: --stage 2 requires --stage1-model", file=sys.stderr)
        return 1
    cfg, train_cfg = _train_config(args)
    cases = stage1_cases(_load_pairs(args.data), cfg.cascade)
    if args.stage == 2:
        cases = stage2_cases(cases, load_checkpoint(args.stage1_model), cfg.cascade)
    ds = split_dataset(cases, args.val)
    net = build(cfg.network, seed=train_cfg.seed)
    net, result = train(net, ds, train_cfg, log=print if args.verbose else None)
    save_checkpoint(net, args.out)
    _write_history(result, args.history)
    if ds.val:
        print(
            f"stage {args.stage}: best val dice {result.best_val_dice:.4f} "
            f"at iteration {result.best_iteration}"
        )
    else:
        print(f"stage {args.stage}: trained {train_cfg.iterations} iterations")
    return 0


def _cmd_finetune(args) -> int:
    cfg, train_cfg = _train_config(args)
    cases = stage1_cases(_load_pairs(args.data), cfg.cascade)
    ds = split_dataset(cases, args.val)
    net, result = finetune(
        args.checkpoint, ds, train_cfg, num_classes=args.classes,
        log=print if args.verbose else None,
    )
    save_checkpoint(net, args.out)
    _write_history(result, args.history)
    print(f"fine-tuned at lr {result.effective_lr:g}")
    return 0


def _cmd_predict(args) -> int:
    net = load_checkpoint(args.model)
    vol = _require_image(read_volume(args.image), "predict")
    restrict = None
    if args.restrict:
        mask = read_volume(args.restrict)
        restrict = BinaryMask(mask.data > 0, mask.spacing)
    mode = "xy_half" if args.overlap else "none"
    plan = plan_tiles(vol.dims, net.config, mode, restrict=restrict)
    probs, labels = predict_volume(net, vol, plan, restrict=restrict)
    write_volume(labels, args.out)
    if args.probs:
        _write_probs(probs, vol.spacing, args.probs)
    print(f"predicted {len(plan.origins)} tiles in mode {mode} -> {args.out}")
    return 0


def _cmd_cascade(args) -> int:
    net1 = load_checkpoint(args.stage1)
    net2 = load_checkpoint(args.stage2)
    ct = _require_image(read_volume(args.image), "cascade")
    cfg = CascadeConfig(body_threshold=args.threshold, dilation_radius=args.radius)
    mode = "xy_half" if args.overlap else "none"
    labels, probs, info = two_stage_predict(net1, net2, ct, cfg, stage2_mode=mode)
    write_volume(labels, args.out)
    if args.probs:
        _write_probs(probs, ct.spacing, args.probs)
    print(
        f"candidates: C1 {info['c1_fraction']:.4f}, C2 {info['c2_fraction']:.4f} "
        f"of the half-resolution grid"
    )
    print(
        f"stage timings: {info['stage1_seconds']:.2f}s + {info['stage2_seconds']:.2f}s "
        f"-> {args.out}"
    )
    return 0


def _cmd_evaluate(args) -> int:
    if len(args.pred) != len(args.gt):
        print("cascadeseg evaluate: --pred and --gt counts differ", file=sys.stderr)
        return 1
    pairs = [
        (
            _require_labels(read_volume(p), "evaluate"),
            _require_labels(read_volume(g), "evaluate"),
        )
        for p, g in zip(args.pred, args.gt)
    ]
    if args.names:
        names = args.names
    else:
        highest = max(int(gt.data.max()) for _, gt in pairs)
        names = [f"class{k}" for k in range(1, highest + 1)]
    print(dice_table(pairs, names).to_text(), end="")
    return 0


def _cmd_curve(args) -> int:
    pred = _require_labels(read_volume(args.pred), "curve")
    gt = _require_labels(read_volume(args.gt), "curve")
    text = curve_text(radius_curve(pred, gt, args.rmax))
    if args.out:
        with open(args.out, "w", encoding="ascii") as f:
            f.write(text)
    else:
        print(text, end="")
    return 0


def _cmd_gradcheck(args) -> int:
    ops = OPS if args.all else (args.op,)
    worst = 0.0
    for op in ops:
        errs = [gradcheck_op(op, seed=args.seed + i).max_error for i in range(args.cases)]
        print(f"{op}: max rel error {max(errs):.3e} over {args.cases} seeds")
        worst = max(worst, max(errs))
    if worst >= GRAD_TOLERANCE:
        print(f"gradcheck failed: {worst:.3e} >= {GRAD_TOLERANCE:g}", file=sys.stderr)
        return 2
    return 0


def _cmd_count_params(args) -> int:
    cfg = load_config(args.config)
    print(param_count(build(cfg.network, seed=0)))
    return 0


def _add_seed(p, default=0):
    p.add_argument("--seed", type=int, default=default, help="random seed")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cascadeseg",
        description="Two-stage volumetric segmentation on CPU: phantoms, "
        "training, tiled prediction, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a phantom dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--cases", type=int, default=1)
    p.add_argument("--dims", type=int, nargs=3, default=[64, 64, 64],
                   metavar=("NX", "NY", "NZ"))
    p.add_argument("--noise", type=float, default=20.0, help="HU noise sigma")
    p.add_argument("--no-organs", action="store_true")
    p.add_argument("--no-vessel", action="store_true")
    _add_seed(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("bodymask", help="threshold + largest component + fill")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=-200.0)
    p.set_defaults(func=_cmd_bodymask)

    p = sub.add_parser("train", help="train one cascade stage from scratch")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="directory of *_image/_labels.mhd")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--stage", type=int, choices=(1, 2), default=1)
    p.add_argument("--stage1-model", help="checkpoint feeding stage-2 candidates")
    p.add_argument("--val", type=int, default=0, help="cases held out for validation")
    p.add_argument("--history", help="write per-iteration log here")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--seed", type=int, default=None,
                   help="override the seed in the config file")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("finetune", help="adapt a checkpoint to new classes")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--val", type=int, default=0)
    p.add_argument("--history")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("predict", help="tile one volume through one network")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--overlap", action="store_true",
                   help="overlap tiles in x-y and average probabilities")
    p.add_argument("--restrict", help="mask volume; outside becomes background")
    p.add_argument("--probs", help="also write per-class probabilities PREFIX_classK.mhd")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("cascade", help="two-stage prediction on a full-size CT")
    p.add_argument("--stage1", required=True)
    p.add_argument("--stage2", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--overlap", action="store_true")
    p.add_argument("--radius", type=int, default=3, help="candidate dilation radius")
    p.add_argument("--threshold", type=float, default=-200.0)
    p.add_argument("--probs")
    p.set_defaults(func=_cmd_cascade)

    p = sub.add_parser("evaluate", help="per-class Dice table for label pairs")
    p.add_argument("--pred", nargs="+", required=True)
    p.add_argument("--gt", nargs="+", required=True)
    p.add_argument("--names", nargs="+", help="foreground class names, label order")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("curve", help="candidate recall/FPR versus dilation radius")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--rmax", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_curve)

    p = sub.add_parser("gradcheck", help="finite-difference check of backward kernels")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--all", action="store_true")
    group.add_argument("--op", choices=OPS)
    p.add_argument("--cases", type=int, default=3, help="seeds per op")
    _add_seed(p)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("count-params", help="learnable parameter count for a config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_count_params)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on bad usage and 0 for --help; we reserve 2 for
        # runtime failures
        return 0 if e.code == 0 else 1

    try:
        limit = os.environ.get("CASCADE_SEG_THREADS")
        if limit:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=int(limit)):
                return args.func(args)
        return args.func(args)
    except (EngineError, OSError, ValueError) as e:
        print(f"cascadeseg {args.command}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
