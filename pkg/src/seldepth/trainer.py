"""Optimization loop: total objective, lr schedule, checkpointed training.

The total objective is L_depth + lambda_mask * L_mask + lambda_ts * L_TS.
Each decoder scale is bilinearly upsampled to full resolution (disparity
values rescaled by 2^s so units stay full-resolution pixels) before its loss
is computed, and the 4 scales are averaged uniformly. In ``direct`` mode the
masked terms are replaced by a plain proxy regression (L1 or berHu) and the
mask loss is skipped entirely, which is the unselective distillation
baseline.

All stochasticity (shuffling, augmentation) is derived from (seed, epoch)
so that interrupting and resuming from a checkpoint reproduces an
uninterrupted run bitwise.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

from seldepth.config import SelectionMask, TrainConfig, config_text, derive_rng, derive_seed, seed_everything
from seldepth.data import StereoSample, augment, collate
from seldepth.networks import (
    MonoNet,
    MonoNetOutputs,
    SyntheticTeacher,
    load_checkpoint,
    parameter_hash,
    save_checkpoint,
)
from seldepth.photometric import PhotometricConfig, masked_mean, reconstruction_loss, smoothness_loss
from seldepth.selection import depth_loss, mask_loss, suppress_invalid_proxy
from seldepth.ts_distill import TeacherAligner, cd_loss, fd_loss, resize_teacher, sd_loss
from seldepth.warping import inverse_warp

CSV_COLUMNS = ["epoch", "lr", "loss_total", "loss_depth", "loss_mask", "loss_ts", "loss_fd", "loss_cd", "loss_sd"]


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate at a given epoch: halved at each listed epoch boundary."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} out of range [0, {cfg.epochs})")
    halvings = sum(1 for e in cfg.lr_halve_epochs if epoch >= e)
    return cfg.lr * (0.5 ** halvings)


def _upsampled(t: torch.Tensor, scale: int, size, value_scale: float = 1.0) -> torch.Tensor:
    if scale == 0:
        return t
    return F.interpolate(t, size=size, mode="bilinear", align_corners=False) * value_scale


def _berhu(diff: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    absd = diff.abs()
    c = (absd * valid).max().detach().clamp(min=1e-6) * 0.2
    per_pixel = torch.where(absd <= c, absd, (diff * diff + c * c) / (2.0 * c))
    return masked_mean(per_pixel, valid)


def total_loss(
    batch: Dict[str, object],
    outputs: MonoNetOutputs,
    cfg: TrainConfig,
    teacher_pyramid=None,
    aligner: Optional[TeacherAligner] = None,
    masks_active: bool = True,
) -> Tuple[torch.Tensor, Dict[str, float]]:
    """Full training objective plus a per-term float breakdown.

    ``masks_active=False`` (mask warm-up) zeroes the masks inside the depth
    loss, reducing it to pure self-supervision, while the mask loss keeps
    training the mask decoder. Raises on any non-finite term, naming it.
    """
    left, right, proxy = batch["left"], batch["right"], batch["proxy"]
    size = left.shape[-2:]
    w = cfg.weights
    photo = PhotometricConfig(alpha=cfg.alpha)

    depth_terms: List[torch.Tensor] = []
    mask_terms: List[torch.Tensor] = []
    for s in range(cfg.scales):
        d = _upsampled(outputs.disparities[s], s, size, value_scale=float(2 ** s))
        if cfg.distill_mode == "selective":
            rc_logits, sm_logits = outputs.mask_logits[s]
            rc = suppress_invalid_proxy(SelectionMask(_upsampled(rc_logits, s, size), role="rc"), proxy)
            sm = suppress_invalid_proxy(SelectionMask(_upsampled(sm_logits, s, size), role="sm"), proxy)
            mask_terms.append(mask_loss(left, right, rc, sm, proxy, d, photo))
            if not masks_active:
                off = torch.full_like(proxy, -10.0)
                rc, sm = SelectionMask(off, role="rc"), SelectionMask(off, role="sm")
            depth_terms.append(depth_loss(left, right, rc, sm, proxy, d, photo))
        else:
            recon = reconstruction_loss(left, inverse_warp(right, d), photo)
            smooth = smoothness_loss(left, d)
            valid = (proxy > 0).to(d.dtype).detach()
            diff = proxy.detach() - d
            prox = masked_mean(diff.abs(), valid) if cfg.direct_loss == "l1" else _berhu(diff, valid)
            depth_terms.append(recon + smooth + prox)

    l_depth = sum(depth_terms) / len(depth_terms)
    l_mask = sum(mask_terms) / len(mask_terms) if mask_terms else torch.zeros_like(l_depth)

    zero = torch.zeros_like(l_depth)
    l_fd = l_cd = l_sd = l_ts = zero
    if cfg.ts_active and outputs.student_pyramid is not None:
        if teacher_pyramid is None:
            raise ValueError("teacher pyramid required when the teacher-student loss is active")
        aligned = resize_teacher(teacher_pyramid, outputs.student_pyramid.shapes(), aligner)
        l_fd = fd_loss(aligned, outputs.student_pyramid)
        l_cd = cd_loss(aligned, outputs.student_pyramid)
        l_sd = sd_loss(aligned, outputs.student_pyramid)
        l_ts = l_fd + w.lambda_cd * l_cd + w.lambda_sd * l_sd

    total = l_depth + w.lambda_mask * l_mask + w.lambda_ts * l_ts
    breakdown = {
        "loss_total": float(total.detach()),
        "loss_depth": float(l_depth.detach()),
        "loss_mask": float(l_mask.detach()),
        "loss_ts": float(l_ts.detach()),
        "loss_fd": float(l_fd.detach()),
        "loss_cd": float(l_cd.detach()),
        "loss_sd": float(l_sd.detach()),
    }
    for name, value in breakdown.items():
        if not math.isfinite(value):
            raise RuntimeError(f"non-finite value in loss term '{name}'")
    return total, breakdown


def _epoch_order(seed: int, epoch: int, n: int) -> List[int]:
    return list(derive_rng(seed, "shuffle", epoch).permutation(n))


def _write_csv(path: Path, rows: List[Dict[str, float]]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def build_models(cfg: TrainConfig):
    """Seeded construction of the trainable network and its frozen teachers."""
    seed_everything(cfg.seed)
    model = MonoNet.from_config(cfg)
    teacher = aligner = None
    if cfg.ts_active:
        teacher = SyntheticTeacher(seed=derive_seed(cfg.seed, "teacher"))
        aligner = TeacherAligner(teacher.channels, model.encoder.channels[1:], seed=derive_seed(cfg.seed, "align"))
    return model, teacher, aligner


def train(
    cfg: TrainConfig,
    dataset: Sequence[StereoSample],
    out_dir,
    resume_from=None,
    max_epochs: Optional[int] = None,
    quiet: bool = False,
) -> Dict[str, object]:
    """Train for cfg.epochs (or up to ``max_epochs``), checkpointing per epoch.

    Only the monocular network is optimized; the teacher and the channel
    aligner are hashed every epoch to prove they never moved. Returns paths
    and the per-epoch loss history.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    model, teacher, aligner = build_models(cfg)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.lr, betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps
    )

    start_epoch = 0
    if resume_from is not None:
        payload, ckpt_cfg = load_checkpoint(resume_from)
        if config_text(ckpt_cfg) != config_text(cfg):
            raise ValueError("checkpoint config does not match the requested config")
        model.load_state_dict(payload["model"])
        if payload["optimizer"] is not None:
            optimizer.load_state_dict(payload["optimizer"])
        start_epoch = payload["epoch"]

    frozen_hashes = {name: parameter_hash(m) for name, m in (("teacher", teacher), ("aligner", aligner)) if m is not None}

    end_epoch = cfg.epochs if max_epochs is None else min(cfg.epochs, start_epoch + max_epochs)
    history: List[Dict[str, float]] = []
    model.train()
    for epoch in range(start_epoch, end_epoch):
        lr = lr_at(epoch, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = _epoch_order(cfg.seed, epoch, len(dataset))
        epoch_seed = derive_seed(cfg.seed, "epoch", epoch)
        sums = {k: 0.0 for k in CSV_COLUMNS if k.startswith("loss_")}
        n_steps = 0
        for i in range(0, len(order), cfg.batch_size):
            samples = [augment(dataset[j], epoch_seed) for j in order[i : i + cfg.batch_size]]
            batch = collate(samples)
            outputs = model(batch["left"])
            teacher_pyr = None
            if teacher is not None:
                teacher_pyr = teacher.features(batch["left"], batch["right"])
            loss, breakdown = total_loss(
                batch, outputs, cfg, teacher_pyramid=teacher_pyr, aligner=aligner,
                masks_active=epoch >= cfg.mask_warmup_epochs,
            )
            optimizer.zero_grad()
            loss.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            for k in sums:
                sums[k] += breakdown[k]
            n_steps += 1

        row = {"epoch": epoch, "lr": lr}
        row.update({k: sums[k] / n_steps for k in sums})
        history.append(row)
        _write_csv(out_dir / "training_log.csv", history)
        save_checkpoint(out_dir / f"ckpt_epoch_{epoch:03d}.pt", model, optimizer, epoch + 1, cfg)
        save_checkpoint(out_dir / "ckpt_latest.pt", model, optimizer, epoch + 1, cfg)

        for name, m in (("teacher", teacher), ("aligner", aligner)):
            if m is not None and parameter_hash(m) != frozen_hashes[name]:
                raise RuntimeError(f"frozen {name} parameters changed during training")
        if not quiet:
            print(" ".join([f"epoch={epoch}", f"lr={lr:.6g}"] + [f"{k}={row[k]:.6g}" for k in sums]))

    return {
        "checkpoint": out_dir / "ckpt_latest.pt",
        "csv": out_dir / "training_log.csv",
        "history": history,
        "model": model,
        "epochs_run": end_epoch - start_epoch,
    }
