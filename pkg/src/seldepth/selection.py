"""Selective distillation of stereo proxy disparities.

Two learned binary masks decide, per pixel, whether the stereo proxy or the
monocular prediction enters a virtual disparity map. The mask loss trains the
masks to pick whichever hypothesis reconstructs (rc) or smooths (sm) better;
the depth loss then distills the proxy into the monocular branch only where
the masks trust it.

Gradient plumbing is deliberately asymmetric:
  * masks see gradient only through the mask loss (straight-through);
  * the monocular disparity sees gradient only through the depth loss;
  * the proxy is data, never a gradient path.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from seldepth.config import SelectionMask
from seldepth.photometric import (
    _VAR_GUARD,
    PhotometricConfig,
    masked_mean,
    reconstruction_loss,
    reconstruction_map,
    smoothness_loss,
    smoothness_map,
)
from seldepth.warping import inverse_warp

# logit magnitude for hand-built masks: saturates sigmoid, still finite
ORACLE_LOGIT = 10.0

# pushed onto mask logits where the proxy is invalid; sigmoid'(-40) ~ 4e-18,
# so those pixels neither select the proxy nor leak gradient into the mask
_FORCE_OFF_LOGIT = -40.0


class _HardSelect(torch.autograd.Function):
    """Per-pixel hard selection with a straight-through backward.

    forward:  where(sigmoid(logits) >= 0.5, when_on, when_off), bit-exact
    backward: gradient of the soft blend s * when_on + (1 - s) * when_off
    """

    @staticmethod
    def forward(ctx, logits, when_on, when_off):
        soft = torch.sigmoid(logits)
        ctx.save_for_backward(soft, when_on, when_off)
        return torch.where(soft >= 0.5, when_on, when_off)

    @staticmethod
    def backward(ctx, grad_out):
        soft, when_on, when_off = ctx.saved_tensors
        grad_logits = grad_on = grad_off = None
        if ctx.needs_input_grad[0]:
            grad_logits = grad_out * (when_on - when_off) * soft * (1.0 - soft)
        if ctx.needs_input_grad[1]:
            grad_on = grad_out * soft
        if ctx.needs_input_grad[2]:
            grad_off = grad_out * (1.0 - soft)
        return grad_logits, grad_on, grad_off


@dataclass
class VirtualDisparity:
    """A per-pixel mixture of proxy and monocular disparities.

    ``map`` holds the trained-with hard selection: every value is bitwise
    equal to one of the two inputs. ``soft_map`` is the sigmoid blend whose
    gradient the hard map borrows.
    """

    map: torch.Tensor  # (B, 1, H, W)
    soft_map: torch.Tensor  # (B, 1, H, W)
    role: str  # "rc" | "sm"


def form_virtual_disparity(mask: SelectionMask, d_ster: torch.Tensor, d_mon: torch.Tensor) -> VirtualDisparity:
    """Select d_ster where the mask fires, d_mon elsewhere.

    The proxy is treated as data (detached); gradients reach the mask logits
    through the straight-through estimator and d_mon through the off-pixels.
    """
    if d_ster.shape != d_mon.shape or d_ster.shape != mask.logits.shape:
        raise ValueError(
            f"shape mismatch: logits {tuple(mask.logits.shape)}, "
            f"d_ster {tuple(d_ster.shape)}, d_mon {tuple(d_mon.shape)}"
        )
    d_ster = d_ster.detach()
    hard = _HardSelect.apply(mask.logits, d_ster, d_mon)
    soft = mask.soft
    return VirtualDisparity(map=hard, soft_map=soft * d_ster + (1.0 - soft) * d_mon, role=mask.role)


def suppress_invalid_proxy(mask: SelectionMask, d_ster: torch.Tensor) -> SelectionMask:
    """Force the mask off (hard, gradient-free) wherever the proxy is non-positive."""
    valid = (d_ster > 0).to(mask.logits.dtype).detach()
    logits = valid * mask.logits + (1.0 - valid) * _FORCE_OFF_LOGIT
    return SelectionMask(logits=logits, role=mask.role)


def mask_loss(
    left: torch.Tensor,
    right: torch.Tensor,
    rc: SelectionMask,
    sm: SelectionMask,
    d_ster: torch.Tensor,
    d_mon: torch.Tensor,
    photo: PhotometricConfig = PhotometricConfig(),
    relaxation: str = "hard",
) -> torch.Tensor:
    """Mask training loss: reconstruction under the rc map + smoothness of the sm map.

    Both disparity hypotheses are detached here, so this loss trains only the
    mask logits. ``relaxation="soft"`` swaps in the sigmoid-blended maps (the
    function whose gradient the straight-through forward borrows); use it for
    finite-difference checks, never for training.
    """
    if relaxation not in ("hard", "soft"):
        raise ValueError(f"relaxation must be 'hard' or 'soft', got {relaxation!r}")
    if rc.role != "rc" or sm.role != "sm":
        raise ValueError(f"mask roles must be ('rc', 'sm'), got ({rc.role!r}, {sm.role!r})")
    d_ster = d_ster.detach()
    d_mon = d_mon.detach()
    v_rc = form_virtual_disparity(rc, d_ster, d_mon)
    v_sm = form_virtual_disparity(sm, d_ster, d_mon)
    d_rc = v_rc.map if relaxation == "hard" else v_rc.soft_map
    d_sm = v_sm.map if relaxation == "hard" else v_sm.soft_map
    recon = reconstruction_loss(left, inverse_warp(right, d_rc), photo)
    return recon + smoothness_loss(left, d_sm)


def depth_loss(
    left: torch.Tensor,
    right: torch.Tensor,
    rc: SelectionMask,
    sm: SelectionMask,
    d_ster: torch.Tensor,
    d_mon: torch.Tensor,
    photo: PhotometricConfig = PhotometricConfig(),
) -> torch.Tensor:
    """Depth training loss: self-supervision plus mask-gated proxy distillation.

    Five terms, each averaged over its own support (an empty support
    contributes exact zero):
      1. reconstruction of the left view through d_mon, over warp-valid pixels;
      2. rc-masked reconstruction consistency between the proxy warp and the
         monocular warp, where both warps are valid;
      3. edge-aware smoothness of d_mon against the left image, all pixels;
      4. sm-masked smoothness of d_mon against the proxy-warped view, where
         that warp is valid;
      5. rc-and-sm-masked L1 between proxy and monocular disparities.

    Masks enter as constants (their gradient path is mask_loss); the proxy is
    detached. Only d_mon receives gradient.
    """
    d_ster = d_ster.detach()
    m_rc = rc.hard
    m_sm = sm.hard

    warp_mon = inverse_warp(right, d_mon)
    warp_ster = inverse_warp(right, d_ster)

    term_rc = reconstruction_loss(left, warp_mon, photo)
    both_valid = warp_ster.validity * warp_mon.validity
    term_rc_proxy = masked_mean(
        reconstruction_map(warp_ster.image, warp_mon.image, photo), m_rc * both_valid
    )
    term_sm = smoothness_loss(left, d_mon)
    term_sm_proxy = masked_mean(smoothness_map(warp_ster.image, d_mon), m_sm * warp_ster.validity)
    term_l1 = masked_mean((d_ster - d_mon).abs(), m_rc * m_sm)
    return term_rc + term_rc_proxy + term_sm + term_sm_proxy + term_l1


def oracle_mask(
    left: torch.Tensor,
    right: torch.Tensor,
    d_ster: torch.Tensor,
    d_mon: torch.Tensor,
    photo: PhotometricConfig = PhotometricConfig(),
    role: str = "rc",
) -> SelectionMask:
    """Greedy per-pixel reference mask: fire where swapping in the proxy helps.

    For each pixel independently, compare the reconstruction integrand under
    the all-monocular warp against the same integrand with the proxy-warped
    value substituted at that single pixel (its patch statistics adjusted
    accordingly, neighbours untouched). The mask fires where the substitution
    does not increase the integrand; ties go to the proxy.
    """
    from seldepth.photometric import _box_sum  # local: oracle mirrors the box-sum path

    with torch.no_grad():
        a = left
        b = inverse_warp(right, d_mon).image
        c = inverse_warp(right, d_ster).image
        base = reconstruction_map(a, b, photo)

        k = photo.patch
        n = float(k * k)
        s_a = _box_sum(a, k)
        s_b = _box_sum(b, k)
        s_ab = _box_sum(a * b, k)
        s_aa = _box_sum(a * a, k)
        s_bb = _box_sum(b * b, k)

        # substitute c for b at the centre pixel only; the centre enters its
        # own patch exactly once even under reflective padding
        # grouping the deltas keeps a zero swap bitwise neutral (ties stay ties)
        delta = c - b
        s_b_sub = s_b + delta
        s_ab_sub = s_ab + a * delta
        s_bb_sub = s_bb + (c * c - b * b)

        num = s_ab_sub - s_a * s_b_sub / n
        var_a = (s_aa - s_a * s_a / n).clamp(min=0.0)
        var_b = (s_bb_sub - s_b_sub * s_b_sub / n).clamp(min=0.0)
        denom = torch.sqrt(var_a + _VAR_GUARD) * torch.sqrt(var_b + _VAR_GUARD) + photo.eps
        zncc_sub = (num / denom).mean(dim=1, keepdim=True)
        l1_sub = (a - c).abs().mean(dim=1, keepdim=True)
        swapped = photo.alpha * (1.0 - zncc_sub) / 2.0 + (1.0 - photo.alpha) * l1_sub

        fire = swapped <= base
        logits = torch.where(fire, ORACLE_LOGIT, -ORACLE_LOGIT).to(d_mon.dtype)
    return SelectionMask(logits=logits, role=role)
