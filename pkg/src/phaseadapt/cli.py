"""Command line entry point: ``phaseadapt <subcommand>``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .core import SCHEMES, ClipSpec, ConfigError, ModelConfig, as_int_list, dump_config, load_config, validate_config

DATA_ROOT_ENV = "PHASEADAPT_DATA_ROOT"


def _add_model_args(p):
    p.add_argument("--config", help="flat key=value model config file")
    p.add_argument("--scheme", choices=SCHEMES)
    p.add_argument("--scale", help="ViT-B, ViT-L or micro")
    p.add_argument("--k", help="STA window counts, e.g. 2 or 2,8")
    p.add_argument("--bottleneck-ratio", type=float)
    p.add_argument("--num-classes", type=int)
    p.add_argument("--image-size", type=int)
    p.add_argument("--patch-size", type=int)
    p.add_argument("--drop-path-rate", type=float)
    p.add_argument("--st-adapter-width", type=int)


def _add_clip_args(p, T=8, R=4):
    p.add_argument("--T", type=int, default=T)
    p.add_argument("--R", type=int, default=R)
    p.add_argument("--fps", type=float, default=1.0)


def _add_train_args(p):
    d = _train_defaults()
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--base-lr", type=float, default=d.base_lr)
    p.add_argument("--warmup-start-lr", type=float, default=d.warmup_start_lr)
    p.add_argument("--warmup-epochs", type=int, default=d.warmup_epochs)
    p.add_argument("--weight-decay", type=float, default=d.weight_decay)
    p.add_argument("--betas", default=",".join(str(b) for b in d.betas))
    p.add_argument("--head-lr-multiplier", type=float, default=d.head_lr_multiplier)
    p.add_argument("--seed", type=int, default=d.seed)


def _train_defaults():
    from .harness.schedule import TrainConfig

    return TrainConfig()


def _train_config(args):
    from .harness.schedule import TrainConfig

    return TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, base_lr=args.base_lr,
        warmup_start_lr=args.warmup_start_lr, warmup_epochs=args.warmup_epochs,
        weight_decay=args.weight_decay, betas=tuple(float(b) for b in args.betas.split(",")),
        head_lr_multiplier=args.head_lr_multiplier, seed=args.seed,
    )


def _model_config(args) -> ModelConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ModelConfig()
    updates = {}
    for flag, fname in [("scheme", "scheme"), ("scale", "scale"), ("bottleneck_ratio", "bottleneck_ratio"),
                        ("num_classes", "num_classes"), ("image_size", "image_size"),
                        ("patch_size", "patch_size"), ("drop_path_rate", "drop_path_rate"),
                        ("st_adapter_width", "st_adapter_width")]:
        v = getattr(args, flag, None)
        if v is not None:
            updates[fname] = v
    if getattr(args, "k", None):
        updates["sta_k_values"] = as_int_list(args.k)
    return dataclasses.replace(cfg, **updates)


def _data_root(args) -> Path:
    root = getattr(args, "data", None) or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise SystemExit(f"no data root: pass --data or set {DATA_ROOT_ENV}")
    return Path(root)


def _load_videos(root):
    from .harness.train import as_videos
    from .sampling import FrameDirectoryVideo, list_videos

    return as_videos(FrameDirectoryVideo(root, vid) for vid in list_videos(root))


def _write_manifest(path, values):
    from .harness.io import write_manifest

    write_manifest(path, values)
    print(f"manifest written to {path}")


# -- subcommands -------------------------------------------------------------------

def cmd_synth_data(args):
    from .harness.synth import SynthSpec, generate_synth

    spec = SynthSpec(num_videos=args.num_videos, min_length=args.min_length, max_length=args.max_length,
                     num_phases=args.num_phases, image_size=args.image_size, signal=args.signal,
                     noise=args.noise, transition_noise=args.transition_noise)
    out = Path(args.out or _data_root(args))
    generate_synth(spec, args.seed, out)
    print(f"wrote {spec.num_videos} videos to {out}")


def cmd_count_params(args):
    from .blocks import count_model

    cfg = _model_config(args)
    part = count_model(cfg, ClipSpec(T=args.T, R=args.R))
    if not args.totals_only:
        width = max(len(n) for n, _, _ in part.rows())
        for name, n, kind in part.rows():
            print(f"{name:<{width}}  {n:>12,d}  {kind}")
        print()
    print(f"adapter_tuned={part.adapter_count}")
    print(f"head_tuned={part.head_count}")
    print(f"frozen={part.frozen_count}")
    print(f"tuned_total={part.tuned_count}")
    print(f"all_total={part.all_count}")
    print(f"tuned/all={part.summary()}")


def cmd_lr_curve(args):
    from .harness.schedule import lr_curve_csv

    text = lr_curve_csv(_train_config(args), args.steps_per_epoch)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)


def cmd_train(args):
    import torch

    from .blocks import assemble_model, partition_parameters
    from .harness.io import load_checkpoint, load_state_map, save_checkpoint
    from .harness.train import build_optimizer, train

    root = _data_root(args)
    videos = _load_videos(root)
    if args.val_videos:
        videos = videos[:-args.val_videos]
    clip = ClipSpec(T=args.T, R=args.R, fps=args.fps)
    tcfg = _train_config(args)
    out = Path(args.out)
    start = 0
    if args.resume:
        model, payload = load_checkpoint(args.resume)
        opt = build_optimizer(model, tcfg)
        if "optimizer" in payload:
            opt.load_state_dict(payload["optimizer"])
        start = payload.get("step", 0)
    else:
        cfg = _model_config(args)
        vcfg = validate_config(cfg, clip)
        ckpt = load_state_map(args.backbone) if args.backbone else None
        model = assemble_model(vcfg, ckpt, seed=tcfg.seed, strict=not args.non_strict)
        if model.import_report is not None:
            print("\n".join(model.import_report.lines()))
        opt = build_optimizer(model, tcfg)
    torch.set_num_threads(args.threads)
    t0 = time.time()
    res = train(model, videos, tcfg, clip, optimizer=opt, start_step=start)
    save_checkpoint(out / "model.pt", model, opt, step=res.steps)
    part = partition_parameters(model)
    _write_manifest(out / "train_manifest.txt", {
        "command": "train", "data": root, "videos": len(videos), "T": clip.T, "R": clip.R,
        **{f.name: getattr(tcfg, f.name) for f in dataclasses.fields(tcfg)},
        "steps": res.steps, "final_loss": res.losses[-1] if res.losses else "nan",
        "tuned/all": part.summary(), "seconds": round(time.time() - t0, 2),
    })
    (out / "model_config.txt").write_text(dump_config(model.cfg))


def cmd_predict(args):
    from .harness.io import load_checkpoint
    from .harness.train import evaluate_video

    model, _ = load_checkpoint(args.checkpoint)
    root = _data_root(args)
    videos = _load_videos(root)
    if args.last:
        videos = videos[-args.last:]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    clip = ClipSpec(model.clip.T, model.clip.R, model.clip.fps)
    for v in videos:
        pred = evaluate_video(model, v, clip, eval_R=args.eval_R)
        (out / f"{v.video_id}.txt").write_text("".join(f"{int(p)}\n" for p in pred.labels))
    print(f"wrote predictions for {len(videos)} videos to {out}")
    _write_manifest(out / "predict_manifest.txt", {
        "command": "predict", "checkpoint": args.checkpoint, "data": root, "videos": len(videos),
        "T": clip.T, "R": clip.R, "eval_R": args.eval_R or clip.R,
    })


def read_label_file(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".tsv":
        from .sampling import read_annotations

        return read_annotations(path)
    return np.array([int(x) for x in path.read_text().split()], dtype=np.int64)


def cmd_eval(args):
    from .metrics import EvalPair, PhaseSequence, aggregate, format_key_values, format_report

    gt_dir, pred_dir = Path(args.gt), Path(args.pred)
    pairs = []
    for pred_path in sorted(pred_dir.glob("*.txt")):
        if pred_path.name.endswith("manifest.txt"):
            continue
        vid = pred_path.stem
        gt_path = next((p for p in (gt_dir / f"{vid}.tsv", gt_dir / f"{vid}.txt") if p.exists()), None)
        if gt_path is None:
            raise SystemExit(f"no ground truth for {vid} in {gt_dir}")
        pairs.append(EvalPair(PhaseSequence(vid, read_label_file(gt_path)), PhaseSequence(vid, read_label_file(pred_path))))
    rep = aggregate(pairs, relaxed=args.relaxed, window_s=args.window, fps=args.fps)
    title = "relaxed evaluation" if args.relaxed else "unrelaxed evaluation"
    print(format_report(rep, title))
    print()
    values = {"relaxed": args.relaxed, **rep.as_dict()}
    sys.stdout.write(format_key_values(values))
    if args.manifest:
        _write_manifest(args.manifest, {"command": "eval", "gt": gt_dir, "pred": pred_dir, **values})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phaseadapt", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write a synthetic phase dataset")
    p.add_argument("--out")
    p.add_argument("--data")
    p.add_argument("--num-videos", type=int, default=20)
    p.add_argument("--min-length", type=int, default=64)
    p.add_argument("--max-length", type=int, default=64)
    p.add_argument("--num-phases", type=int, default=2)
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--signal", choices=["appearance", "motion"], default="appearance")
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--transition-noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("count-params", help="print the frozen/tuned partition")
    _add_model_args(p)
    _add_clip_args(p, T=16)
    p.add_argument("--totals-only", action="store_true")
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("lr-curve", help="emit the learning-rate schedule as CSV")
    _add_train_args(p)
    p.add_argument("--steps-per-epoch", type=int, default=100)
    p.add_argument("--out")
    p.set_defaults(func=cmd_lr_curve)

    p = sub.add_parser("train", help="train adapters on a frame-directory dataset")
    _add_model_args(p)
    _add_clip_args(p)
    _add_train_args(p)
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--backbone", help="flat name->array checkpoint for the frozen weights")
    p.add_argument("--non-strict", action="store_true")
    p.add_argument("--resume")
    p.add_argument("--val-videos", type=int, default=0, help="hold out the last N videos")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write per-frame predictions, one id per line")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--eval-R", type=int)
    p.add_argument("--last", type=int, default=0, help="only the last N videos")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score prediction files against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--relaxed", action="store_true")
    p.add_argument("--window", type=float, default=10.0, help="relaxation window in seconds")
    p.add_argument("--fps", type=float, default=1.0)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        args.func(args)
    except ConfigError as exc:
        for fld, reason in exc.errors:
            print(f"config error: {fld}: {reason}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
