"""Shared builders for randomized test instances (seeded, float64)."""

from __future__ import annotations

import numpy as np
import torch


def rand_image(rng: np.random.Generator, c: int, h: int, w: int) -> torch.Tensor:
    """(1, c, h, w) float64 image-like tensor in (0, 1)."""
    return torch.from_numpy(rng.random((1, c, h, w)) * 0.9 + 0.05)


def rand_disparity(rng: np.random.Generator, h: int, w: int, lo: float = 0.3, hi: float = 2.5) -> torch.Tensor:
    """(1, 1, h, w) float64 disparity away from warp-validity boundaries."""
    return torch.from_numpy(rng.random((1, 1, h, w)) * (hi - lo) + lo)


def rand_pyramid(rng: np.random.Generator, channels, h: int, w: int):
    """List of (1, C_i, h/2^i, w/2^i) float64 feature tensors."""
    levels = []
    for i, c in enumerate(channels):
        levels.append(torch.from_numpy(rng.standard_normal((1, c, h // (2 ** i), w // (2 ** i)))))
    return levels


def torch_grads(loss_fn, tensors):
    """Analytic gradients of a scalar torch function w.r.t. leaf tensors."""
    leaves = [t.clone().detach().requires_grad_(True) for t in tensors]
    loss = loss_fn(leaves)
    grads = torch.autograd.grad(loss, leaves, allow_unused=True)
    return [torch.zeros_like(l) if g is None else g for l, g in zip(leaves, grads)]
