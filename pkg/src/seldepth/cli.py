"""Command-line entry points: gen-data, train, eval, masks, plot.

Exit codes: 0 success, 2 usage error (bad flags or subcommand), 1 runtime
error (missing files, bad data, training failures).
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import torch

from seldepth import data as data_mod
from seldepth import pngio
from seldepth.config import SelectionMask, TrainConfig, derive_seed, load_config, save_config
from seldepth.evaluation import evaluate, mask_diagnostics, predict_disparity
from seldepth.networks import MonoNet, load_checkpoint
from seldepth.selection import form_virtual_disparity, oracle_mask, suppress_invalid_proxy
from seldepth.trainer import train


def _cmd_gen_data(args) -> int:
    rig = data_mod.CameraRig()
    splits = [("train", args.n), ("val", args.n_val), ("test", args.n_test)]
    for split, count in splits:
        samples = []
        for i in range(count):
            sid = f"{i:04d}"
            scene_seed = derive_seed(args.seed, split, i)
            sample = data_mod.generate_scene(scene_seed, args.height, args.width, rig=rig, sample_id=sid)
            if args.corrupt_mode == "none":
                spec = data_mod.CorruptionSpec(regions=[], mode="offset", seed=scene_seed)
            else:
                spec = data_mod.random_corruption(
                    derive_seed(args.seed, "corrupt", split, i), args.height, args.width,
                    fraction=args.corrupt_frac, mode=args.corrupt_mode, offset=args.corrupt_delta,
                )
            samples.append(data_mod.apply_corruption(sample, spec))
        data_mod.save_dataset(args.out, split, samples, rig=rig)
        print(f"split={split} n={count} out={Path(args.out) / split}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.data:
        cfg = replace(cfg, dataset_root=args.data)
    if not cfg.dataset_root:
        raise ValueError("no dataset root: set dataset_root in the config or pass --data")
    dataset = data_mod.load_dataset(cfg.dataset_root, "train", proxy_mode=cfg.proxy_mode, crop_bottom=cfg.crop_bottom)
    result = train(cfg, dataset, args.out, resume_from=args.resume, max_epochs=args.max_epochs)
    save_config(cfg, Path(args.out) / "config.txt")
    print(f"checkpoint={result['checkpoint']} csv={result['csv']}")
    return 0


def _load_eval_split(root, split, crop_bottom=0.0):
    return data_mod.load_dataset(root, split, proxy_mode="synthetic", crop_bottom=crop_bottom)


def _cmd_eval(args) -> int:
    dataset = _load_eval_split(args.data, args.split)
    report = evaluate(args.ckpt, dataset, cap=args.cap)
    row = report.row()
    print(" ".join(f"{k}={v:.6g}" for k, v in row.items()))
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(row.keys()))
            writer.writeheader()
            writer.writerow(row)
        print(f"report={out}")
    return 0


def _cmd_masks(args) -> int:
    payload, cfg = load_checkpoint(args.ckpt)
    model = MonoNet.from_config(cfg)
    model.load_state_dict(payload["model"])
    model.eval()
    dataset = _load_eval_split(args.data, args.split)
    if args.limit:
        dataset = dataset[: args.limit]
    out = Path(args.out)
    for sample in dataset:
        left = sample.left.unsqueeze(0)
        proxy = sample.proxy_disparity.unsqueeze(0)
        with torch.no_grad():
            outputs = model(left)
            rc_logits, sm_logits = outputs.mask_logits[0]
            rc = suppress_invalid_proxy(SelectionMask(rc_logits, role="rc"), proxy)
            sm = SelectionMask(sm_logits, role="sm")
            d_mon = outputs.disparities[0]
            virtual = form_virtual_disparity(rc, proxy, d_mon)
            oracle = oracle_mask(left, sample.right.unsqueeze(0), proxy, d_mon)
        pngio.save_mask_png(out / f"{sample.id}_mask_rc.png", rc.hard)
        pngio.save_mask_png(out / f"{sample.id}_mask_sm.png", sm.hard)
        pngio.save_mask_png(out / f"{sample.id}_oracle_rc.png", oracle.hard)
        pngio.save_disparity_png(out / f"{sample.id}_disp.png", d_mon)
        pngio.save_disparity_png(out / f"{sample.id}_virtual_rc.png", virtual.map)
    print(f"dumped={len(dataset)} out={out}")
    try:
        stats = mask_diagnostics(model, dataset)
        print(" ".join(f"{k}={v:.4f}" for k, v in stats.items()))
    except ValueError as e:
        print(f"mask_stats=unavailable reason={e}")
    return 0


def _cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.csv:
        with open(args.csv) as f:
            rows = list(csv.DictReader(f))
        if not rows:
            raise ValueError(f"no rows in {args.csv}")
        epochs = [int(r["epoch"]) for r in rows]
        fig, ax = plt.subplots(figsize=(7, 4))
        for key in ("loss_total", "loss_depth", "loss_mask", "loss_ts"):
            ax.plot(epochs, [float(r[key]) for r in rows], label=key)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "losses.png", dpi=120)
        plt.close(fig)
        print(f"plot={out / 'losses.png'}")

    if args.ckpt and args.data:
        payload, cfg = load_checkpoint(args.ckpt)
        model = MonoNet.from_config(cfg)
        model.load_state_dict(payload["model"])
        model.eval()
        dataset = _load_eval_split(args.data, args.split)[: args.n]
        for sample in dataset:
            left = sample.left.unsqueeze(0)
            proxy = sample.proxy_disparity.unsqueeze(0)
            with torch.no_grad():
                outputs = model(left)
                rc = suppress_invalid_proxy(SelectionMask(outputs.mask_logits[0][0], role="rc"), proxy)
                sm = SelectionMask(outputs.mask_logits[0][1], role="sm")
                disp = outputs.disparities[0]
            panels = [
                ("left", sample.left.permute(1, 2, 0).numpy(), None),
                ("proxy", sample.proxy_disparity[0].numpy(), "magma"),
                ("predicted", disp[0, 0].numpy(), "magma"),
                ("mask rc", rc.hard[0, 0].numpy(), "gray"),
                ("mask sm", sm.hard[0, 0].numpy(), "gray"),
            ]
            fig, axes = plt.subplots(1, len(panels), figsize=(3 * len(panels), 2.6))
            for ax, (title, img, cmap) in zip(axes, panels):
                ax.imshow(img, cmap=cmap)
                ax.set_title(title, fontsize=9)
                ax.axis("off")
            fig.tight_layout()
            fig.savefig(out / f"{sample.id}_panels.png", dpi=120)
            plt.close(fig)
        print(f"panels={len(dataset)} out={out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seldepth", description="Selective stereo-proxy distillation for monocular depth.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic stereo dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=8, help="training samples")
    p.add_argument("--n-val", type=int, default=4)
    p.add_argument("--n-test", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--corrupt-mode", choices=["none", "zero", "blur", "offset"], default="offset")
    p.add_argument("--corrupt-frac", type=float, default=0.25)
    p.add_argument("--corrupt-delta", type=float, default=4.0)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data", default=None, help="overrides dataset_root from the config")
    p.add_argument("--resume", default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split with ground truth")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--cap", type=float, default=80.0)
    p.add_argument("--out", default=None, help="write the report as CSV")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("masks", help="dump selection masks and diagnostics")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int, default=None)
    p.set_defaults(func=_cmd_masks)

    p = sub.add_parser("plot", help="render loss curves and prediction panels")
    p.add_argument("--csv", default=None)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--split", default="val")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    try:
        return args.func(args)
    except Exception as e:  # runtime failures exit 1 with a named cause
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
