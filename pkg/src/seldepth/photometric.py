"""Self-supervised loss primitives: ZNCC reconstruction and edge-aware smoothness.

ZNCC (zero-mean normalized cross-correlation over a local patch) replaces the
usual SSIM term: it is contrast-invariant and bounded in [-1, 1]. Both losses
also come in per-pixel ``*_map`` form so that callers can apply their own
masked means (the selective-distillation losses need that).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from seldepth.warping import WarpResult

# keeps sqrt differentiable at zero variance without moving healthy values
_VAR_GUARD = 1e-12


@dataclass(frozen=True)
class PhotometricConfig:
    alpha: float = 0.85  # correlation term weight; (1 - alpha) goes to L1
    patch: int = 3  # odd patch side for ZNCC
    eps: float = 1e-6  # variance guard; textureless patches score 0, not 1

    def __post_init__(self):
        if self.patch < 3 or self.patch % 2 == 0:
            raise ValueError("patch must be an odd integer >= 3")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


def _box_sum(x: torch.Tensor, k: int) -> torch.Tensor:
    """Per-channel patch sums with reflective border padding."""
    r = k // 2
    padded = F.pad(x, (r, r, r, r), mode="reflect")
    return F.avg_pool2d(padded, kernel_size=k, stride=1) * (k * k)


def zncc_map(a: torch.Tensor, b: torch.Tensor, cfg: PhotometricConfig = PhotometricConfig()) -> torch.Tensor:
    """Per-pixel patch ZNCC, computed per channel then averaged; (B, 1, H, W) in [-1, 1].

    sum((a - mean_a) * (b - mean_b)) / (sqrt(var_a) * sqrt(var_b) + eps)
    over the patch around each pixel; a zero-variance patch scores 0.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    k = cfg.patch
    n = float(k * k)
    s_a = _box_sum(a, k)
    s_b = _box_sum(b, k)
    s_ab = _box_sum(a * b, k)
    s_aa = _box_sum(a * a, k)
    s_bb = _box_sum(b * b, k)
    num = s_ab - s_a * s_b / n
    var_a = (s_aa - s_a * s_a / n).clamp(min=0.0)
    var_b = (s_bb - s_b * s_b / n).clamp(min=0.0)
    denom = torch.sqrt(var_a + _VAR_GUARD) * torch.sqrt(var_b + _VAR_GUARD) + cfg.eps
    return (num / denom).mean(dim=1, keepdim=True)


def reconstruction_map(a: torch.Tensor, b: torch.Tensor, cfg: PhotometricConfig = PhotometricConfig()) -> torch.Tensor:
    """Per-pixel reconstruction penalty alpha*(1 - ZNCC)/2 + (1 - alpha)*|a - b|.

    The L1 term is averaged over channels. Returns (B, 1, H, W).
    """
    zncc = zncc_map(a, b, cfg)
    l1 = (a - b).abs().mean(dim=1, keepdim=True)
    return cfg.alpha * (1.0 - zncc) / 2.0 + (1.0 - cfg.alpha) * l1


def masked_mean(pixel_map: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean of ``pixel_map`` over mask == 1 pixels; exact 0 for an empty mask."""
    count = mask.sum()
    if count == 0:
        return pixel_map.sum() * 0.0
    return (pixel_map * mask).sum() / count


def reconstruction_loss(
    ref: torch.Tensor, recon: WarpResult, cfg: PhotometricConfig = PhotometricConfig()
) -> torch.Tensor:
    """Mean reconstruction penalty between ``ref`` and a warped view, over valid pixels."""
    if ref.shape != recon.image.shape:
        raise ValueError(f"shape mismatch: ref {tuple(ref.shape)} vs recon {tuple(recon.image.shape)}")
    if recon.validity.sum() == 0:
        raise ValueError("no valid pixels in reconstruction")
    return masked_mean(reconstruction_map(ref, recon.image, cfg), recon.validity)


def smoothness_map(ref: torch.Tensor, d: torch.Tensor) -> torch.Tensor:
    """Per-pixel |dx d| * exp(-|dx I|) + |dy d| * exp(-|dy I|), forward differences.

    Image gradients are channel-averaged absolute differences. The last
    column (x term) and last row (y term) have no forward difference and
    contribute zero. Returns (B, 1, H, W).
    """
    if ref.shape[0] != d.shape[0] or ref.shape[2:] != d.shape[2:]:
        raise ValueError(f"shape mismatch: ref {tuple(ref.shape)} vs d {tuple(d.shape)}")
    grad_d_x = (d[:, :, :, 1:] - d[:, :, :, :-1]).abs()
    grad_d_y = (d[:, :, 1:, :] - d[:, :, :-1, :]).abs()
    grad_i_x = (ref[:, :, :, 1:] - ref[:, :, :, :-1]).abs().mean(dim=1, keepdim=True)
    grad_i_y = (ref[:, :, 1:, :] - ref[:, :, :-1, :]).abs().mean(dim=1, keepdim=True)
    term_x = F.pad(grad_d_x * torch.exp(-grad_i_x), (0, 1, 0, 0))
    term_y = F.pad(grad_d_y * torch.exp(-grad_i_y), (0, 0, 0, 1))
    return term_x + term_y


def smoothness_loss(ref: torch.Tensor, d: torch.Tensor) -> torch.Tensor:
    """Edge-aware smoothness of a disparity map, averaged over all pixels."""
    return smoothness_map(ref, d).mean()
