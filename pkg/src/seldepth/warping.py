"""Differentiable horizontal warping by disparity, and disparity <-> depth.

A left-referenced warp reconstructs the reference view by sampling the
source image at ``x - d`` along each row (``x + d`` for right-referenced).
Sampling is bilinear so the result is differentiable in the disparity.
Out-of-image samples are edge-clamped and flagged invalid; losses are meant
to average over the valid set only.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from seldepth.config import CameraRig

MAX_DEPTH_SENTINEL = 100.0  # meters, assigned where disparity is degenerate
MIN_DISPARITY = 1e-6


@dataclass
class WarpResult:
    """Reconstruction of the reference view plus a per-pixel validity flag.

    ``validity[p]`` is 0 exactly when the sampling x-coordinate left
    [0, W-1]; the image values there are edge-clamped, not zeroed.
    """

    image: torch.Tensor  # (B, C, H, W), values stay in [0, 1]
    validity: torch.Tensor  # (B, 1, H, W), {0, 1}, detached


def inverse_warp(source: torch.Tensor, disparity: torch.Tensor, direction: str = "left-ref") -> WarpResult:
    """Warp ``source`` to the reference viewpoint given per-pixel disparity.

    For ``direction="left-ref"`` the reference is the left view and each
    pixel (x, y) samples source at (x - d[x, y], y); ``"right-ref"`` flips
    the sign. Differentiable w.r.t. ``disparity``.
    """
    if direction not in ("left-ref", "right-ref"):
        raise ValueError(f"direction must be 'left-ref' or 'right-ref', got {direction!r}")
    if source.dim() != 4 or disparity.dim() != 4 or disparity.shape[1] != 1:
        raise ValueError("inverse_warp expects source (B,C,H,W) and disparity (B,1,H,W)")
    if source.shape[0] != disparity.shape[0] or source.shape[2:] != disparity.shape[2:]:
        raise ValueError(
            f"shape mismatch: source {tuple(source.shape)} vs disparity {tuple(disparity.shape)}"
        )
    if not torch.isfinite(disparity).all():
        raise ValueError("disparity contains non-finite values")

    b, _, h, w = source.shape
    dtype, device = disparity.dtype, disparity.device
    sign = -1.0 if direction == "left-ref" else 1.0

    xs = torch.arange(w, dtype=dtype, device=device).view(1, 1, 1, w).expand(b, 1, h, w)
    ys = torch.arange(h, dtype=dtype, device=device).view(1, 1, h, 1).expand(b, 1, h, w)
    x_src = xs + sign * disparity

    with torch.no_grad():
        validity = ((x_src >= 0) & (x_src <= w - 1)).to(dtype)

    # grid_sample wants coords normalized to [-1, 1] with align_corners=True
    grid_x = 2.0 * x_src / max(w - 1, 1) - 1.0
    grid_y = 2.0 * ys / max(h - 1, 1) - 1.0
    grid = torch.cat([grid_x, grid_y], dim=1).permute(0, 2, 3, 1)

    image = F.grid_sample(
        source.to(dtype), grid, mode="bilinear", padding_mode="border", align_corners=True
    )
    return WarpResult(image=image, validity=validity)


def disparity_to_depth(d: torch.Tensor, rig: CameraRig, sentinel: float = MAX_DEPTH_SENTINEL) -> torch.Tensor:
    """depth = focal_px * baseline_m / disparity; degenerate pixels get the sentinel."""
    fb = rig.focal_length_px * rig.baseline_m
    depth = fb / d.clamp(min=MIN_DISPARITY)
    return torch.where(d > MIN_DISPARITY, depth, torch.full_like(depth, sentinel))


def depth_to_disparity(depth: torch.Tensor, rig: CameraRig) -> torch.Tensor:
    """Inverse of :func:`disparity_to_depth` away from the sentinel."""
    fb = rig.focal_length_px * rig.baseline_m
    return fb / depth.clamp(min=1e-12)
