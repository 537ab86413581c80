"""PNG codecs for the on-disk interfaces.

Disparities use the KITTI convention: 16-bit PNG, stored value = pixels * 256
(so real data drops in unchanged). Masks are 8-bit 0/255 for easy inspection.
Images are 8-bit RGB.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np
import torch

DISPARITY_SCALE = 256.0


def _to_hw(t) -> np.ndarray:
    if isinstance(t, torch.Tensor):
        t = t.detach().cpu().numpy()
    a = np.asarray(t)
    a = np.squeeze(a)
    if a.ndim != 2:
        raise ValueError(f"expected a single H x W map, got shape {a.shape}")
    return a


def save_disparity_png(path, disparity) -> None:
    """Write a disparity map as 16-bit PNG (value = px * 256, clipped to uint16)."""
    d = _to_hw(disparity)
    encoded = np.clip(np.round(d * DISPARITY_SCALE), 0, 65535).astype(np.uint16)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), encoded):
        raise IOError(f"failed to write {path}")


def load_disparity_png(path) -> torch.Tensor:
    """Read a 16-bit disparity PNG back to pixels (value / 256), as (H, W) float32."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"failed to read disparity PNG: {path}")
    if raw.dtype != np.uint16 or raw.ndim != 2:
        raise IOError(f"malformed disparity PNG (want single-channel uint16): {path}")
    return torch.from_numpy(raw.astype(np.float32) / DISPARITY_SCALE)


def save_mask_png(path, mask) -> None:
    """Write a binary mask as 8-bit PNG with 1 -> 255."""
    m = _to_hw(mask)
    encoded = (m > 0.5).astype(np.uint8) * 255
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), encoded):
        raise IOError(f"failed to write {path}")


def load_mask_png(path) -> torch.Tensor:
    raw = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if raw is None:
        raise IOError(f"failed to read mask PNG: {path}")
    return torch.from_numpy((raw > 127).astype(np.float32))


def save_image_png(path, image) -> None:
    """Write a (3, H, W) [0, 1] image as 8-bit RGB PNG."""
    if isinstance(image, torch.Tensor):
        image = image.detach().cpu().numpy()
    a = np.asarray(image)
    if a.ndim != 3 or a.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got shape {a.shape}")
    rgb = np.clip(np.round(a.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR)):
        raise IOError(f"failed to write {path}")


def load_image_png(path) -> torch.Tensor:
    """Read an 8-bit RGB PNG to a (3, H, W) float32 tensor in [0, 1]."""
    raw = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if raw is None:
        raise IOError(f"failed to read image PNG: {path}")
    rgb = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0
    return torch.from_numpy(rgb.transpose(2, 0, 1))
