"""Depth evaluation metrics, the single-image evaluation protocol, mask stats.

Metrics follow the standard monocular-depth protocol: evaluate where
0 < gt <= cap (80 m), clamp predictions into [1e-3, cap], no median scaling
(proxy-supervised training is metric already). Aggregation across samples is
pixel-weighted: reports reduce through per-pixel sums, so the result does
not depend on sample order or grouping.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import torch
import torch.nn.functional as F

from seldepth.config import CameraRig
from seldepth.networks import MonoNet, load_checkpoint
from seldepth.photometric import PhotometricConfig
from seldepth.selection import oracle_mask, suppress_invalid_proxy
from seldepth.config import SelectionMask
from seldepth.warping import disparity_to_depth

DEPTH_CAP = 80.0
PRED_DEPTH_FLOOR = 1e-3


@dataclass
class EvalReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    n_pixels: int
    per_sample: List["EvalReport"] = field(default_factory=list)

    def row(self) -> Dict[str, float]:
        return {
            "abs_rel": self.abs_rel,
            "sq_rel": self.sq_rel,
            "rmse": self.rmse,
            "rmse_log": self.rmse_log,
            "a1": self.delta1,
            "a2": self.delta2,
            "a3": self.delta3,
            "n_pixels": self.n_pixels,
        }


class _Sums:
    """Per-pixel metric sums; associative, order-independent reduction."""

    FIELDS = ("abs_rel", "sq_rel", "sq_err", "sq_log_err", "d1", "d2", "d3")

    def __init__(self):
        self.n = 0
        self.values = {k: 0.0 for k in self.FIELDS}

    def add(self, pred: torch.Tensor, gt: torch.Tensor) -> "_Sums":
        err = pred - gt
        ratio = torch.maximum(pred / gt, gt / pred)
        self.values["abs_rel"] += float((err.abs() / gt).sum())
        self.values["sq_rel"] += float((err * err / gt).sum())
        self.values["sq_err"] += float((err * err).sum())
        log_err = torch.log(pred) - torch.log(gt)
        self.values["sq_log_err"] += float((log_err * log_err).sum())
        for k, thresh in (("d1", 1.25), ("d2", 1.25 ** 2), ("d3", 1.25 ** 3)):
            self.values[k] += float((ratio < thresh).sum())
        self.n += int(gt.numel())
        return self

    def merge(self, other: "_Sums") -> "_Sums":
        self.n += other.n
        for k in self.FIELDS:
            self.values[k] += other.values[k]
        return self

    def report(self, per_sample: Optional[List[EvalReport]] = None) -> EvalReport:
        if self.n == 0:
            raise ValueError("empty valid set: no pixels with 0 < gt <= cap")
        v, n = self.values, float(self.n)
        return EvalReport(
            abs_rel=v["abs_rel"] / n,
            sq_rel=v["sq_rel"] / n,
            rmse=(v["sq_err"] / n) ** 0.5,
            rmse_log=(v["sq_log_err"] / n) ** 0.5,
            delta1=v["d1"] / n,
            delta2=v["d2"] / n,
            delta3=v["d3"] / n,
            n_pixels=self.n,
            per_sample=per_sample or [],
        )


def depth_metrics(pred_depth: torch.Tensor, gt_depth: torch.Tensor, cap: float = DEPTH_CAP) -> EvalReport:
    """Metrics over pixels with 0 < gt <= cap; pred clamped to [1e-3, cap]."""
    if pred_depth.shape != gt_depth.shape:
        raise ValueError(f"shape mismatch: pred {tuple(pred_depth.shape)} vs gt {tuple(gt_depth.shape)}")
    valid = (gt_depth > 0) & (gt_depth <= cap)
    if not bool(valid.any()):
        raise ValueError("empty valid set: no pixels with 0 < gt <= cap")
    pred = pred_depth[valid].clamp(PRED_DEPTH_FLOOR, cap)
    return _Sums().add(pred, gt_depth[valid]).report()


def predict_disparity(model: MonoNet, left: torch.Tensor, out_size=None) -> torch.Tensor:
    """Finest-scale disparity for a single (3, H, W) image, optionally resized.

    Resizing to a different width rescales the values so they remain
    disparities in the target resolution's pixel units.
    """
    model.eval()
    with torch.no_grad():
        out = model(left.unsqueeze(0))
        d = out.disparities[0]
        if out_size is not None and tuple(d.shape[-2:]) != tuple(out_size):
            scale = out_size[1] / d.shape[-1]
            d = F.interpolate(d, size=tuple(out_size), mode="bilinear", align_corners=False) * scale
    return d[0]


def evaluate(checkpoint, dataset: Sequence, rig: Optional[CameraRig] = None, cap: float = DEPTH_CAP) -> EvalReport:
    """Single-image evaluation: never touches right views or proxies.

    ``checkpoint`` may be a path or an already-built MonoNet. Ground-truth
    disparities convert to depth through each sample's rig; samples without
    ground truth are an error.
    """
    if isinstance(checkpoint, MonoNet):
        model = checkpoint
    else:
        payload, cfg = load_checkpoint(checkpoint)
        model = MonoNet.from_config(cfg)
        model.load_state_dict(payload["model"])
    model.eval()

    totals = _Sums()
    per_sample: List[EvalReport] = []
    for sample in dataset:
        gt = sample.gt_disparity
        if gt is None:
            raise ValueError(f"sample {sample.id!r} has no ground truth disparity")
        sample_rig = rig if rig is not None else sample.rig
        pred_disp = predict_disparity(model, sample.left, out_size=gt.shape[-2:])
        pred_depth = disparity_to_depth(pred_disp.view(1, 1, *pred_disp.shape[-2:]), sample_rig)[0, 0]
        gt_depth = torch.where(
            gt[0] > 0, disparity_to_depth(gt.view(1, 1, *gt.shape[-2:]), sample_rig)[0, 0], torch.zeros(())
        )
        valid = (gt_depth > 0) & (gt_depth <= cap)
        if not bool(valid.any()):
            continue
        s = _Sums().add(pred_depth[valid].clamp(PRED_DEPTH_FLOOR, cap), gt_depth[valid])
        per_sample.append(s.report())
        totals.merge(s)
    return totals.report(per_sample)


def texture_mask(image: torch.Tensor, patch: int = 3, threshold: float = 1e-4) -> torch.Tensor:
    """1 where the local patch variance (channel mean) exceeds the threshold.

    (3, H, W) or (B, 3, H, W) -> (B, 1, H, W); flat regions are excluded from
    mask-quality statistics because the reconstruction loss cannot rank
    hypotheses there.
    """
    from seldepth.photometric import _box_sum

    x = image.unsqueeze(0) if image.dim() == 3 else image
    n = float(patch * patch)
    s = _box_sum(x, patch)
    ss = _box_sum(x * x, patch)
    var = ((ss - s * s / n) / n).clamp(min=0.0).mean(dim=1, keepdim=True)
    return (var > threshold).to(x.dtype)


def mask_diagnostics(checkpoint, dataset: Sequence, photo: Optional[PhotometricConfig] = None) -> Dict[str, float]:
    """Quantify mask quality against corruption metadata and the greedy oracle.

    Returns fractions over the dataset:
      corrupted_rejected  -  corrupted textured pixels with learned m_rc == 0
      oracle_agreement    -  m_rc == oracle on textured, non-occluded pixels
      rc_fill, sm_fill    -  overall mask fill rates
    """
    if isinstance(checkpoint, MonoNet):
        model = checkpoint
    else:
        payload, cfg = load_checkpoint(checkpoint)
        model = MonoNet.from_config(cfg)
        model.load_state_dict(payload["model"])
    model.eval()
    photo = photo or PhotometricConfig()

    counts = {"corrupt": 0.0, "corrupt_rej": 0.0, "orc": 0.0, "orc_agree": 0.0, "rc_on": 0.0, "sm_on": 0.0, "all": 0.0}
    for sample in dataset:
        if sample.corrupt_mask is None:
            raise ValueError(f"sample {sample.id!r} carries no corruption metadata")
        left = sample.left.unsqueeze(0)
        right = sample.right.unsqueeze(0)
        proxy = sample.proxy_disparity.unsqueeze(0)
        with torch.no_grad():
            out = model(left)
            rc_logits, sm_logits = out.mask_logits[0]
            rc = suppress_invalid_proxy(SelectionMask(rc_logits, role="rc"), proxy)
            sm = SelectionMask(sm_logits, role="sm")
            m_rc, m_sm = rc.hard, sm.hard
            d_mon = out.disparities[0]
            oracle = oracle_mask(left, right, proxy, d_mon, photo).hard

        textured = texture_mask(left)
        occl = sample.occlusion.unsqueeze(0) if sample.occlusion is not None else torch.zeros_like(m_rc)
        corrupt = sample.corrupt_mask.unsqueeze(0)

        ct = corrupt * textured
        counts["corrupt"] += float(ct.sum())
        counts["corrupt_rej"] += float((ct * (1 - m_rc)).sum())
        ok = textured * (1 - occl)
        counts["orc"] += float(ok.sum())
        counts["orc_agree"] += float((ok * (m_rc == oracle)).sum())
        counts["rc_on"] += float(m_rc.sum())
        counts["sm_on"] += float(m_sm.sum())
        counts["all"] += float(m_rc.numel())

    def frac(a, b):
        return counts[a] / counts[b] if counts[b] > 0 else float("nan")

    return {
        "corrupted_rejected": frac("corrupt_rej", "corrupt"),
        "oracle_agreement": frac("orc_agree", "orc"),
        "rc_fill": frac("rc_on", "all"),
        "sm_fill": frac("sm_on", "all"),
    }
