import numpy as np
import pytest
import torch

from seldepth.config import CameraRig
from seldepth.warping import (
    MAX_DEPTH_SENTINEL,
    depth_to_disparity,
    disparity_to_depth,
    inverse_warp,
)

import oracles
from helpers import rand_image, rand_disparity


def test_zero_disparity_is_identity():
    rng = np.random.default_rng(0)
    src = rand_image(rng, 3, 6, 10)
    out = inverse_warp(src, torch.zeros(1, 1, 6, 10, dtype=torch.float64))
    assert torch.all(out.validity == 1.0)
    assert float((out.image - src).abs().max()) < 1e-6


def test_integer_shift_matches_column_copy():
    rng = np.random.default_rng(1)
    src = rand_image(rng, 3, 6, 12)
    d = torch.full((1, 1, 6, 12), 3.0, dtype=torch.float64)
    out = inverse_warp(src, d, direction="left-ref")
    # left-referenced: pixel x samples source column x - 3
    assert float((out.image[..., 3:] - src[..., :-3]).abs().max()) < 1e-6
    assert torch.all(out.validity[..., 3:] == 1.0)
    assert torch.all(out.validity[..., :3] == 0.0)


def test_right_referenced_direction_flips_sign():
    rng = np.random.default_rng(2)
    src = rand_image(rng, 3, 6, 12)
    d = torch.full((1, 1, 6, 12), 2.0, dtype=torch.float64)
    out = inverse_warp(src, d, direction="right-ref")
    assert float((out.image[..., :-2] - src[..., 2:]).abs().max()) < 1e-6
    assert torch.all(out.validity[..., -2:] == 0.0)


def test_subpixel_warp_matches_bilinear_oracle():
    rng = np.random.default_rng(3)
    for _ in range(10):
        src = rand_image(rng, 3, 5, 9)
        d = rand_disparity(rng, 5, 9)
        out = inverse_warp(src, d)
        img_o, valid_o = oracles.warp_oracle(src[0].numpy(), d[0, 0].numpy())
        assert np.abs(out.image[0].numpy() - img_o).max() < 1e-9
        assert np.array_equal(out.validity[0, 0].numpy(), valid_o)


def test_validity_is_analytic_not_sampled():
    src = torch.rand(1, 3, 4, 8, dtype=torch.float64)
    d = torch.zeros(1, 1, 4, 8, dtype=torch.float64)
    d[..., 0] = 0.5  # x_src = -0.5 at the first column
    d[..., -1] = -0.5  # x_src = W - 0.5 at the last column
    out = inverse_warp(src, d)
    assert torch.all(out.validity[..., 0] == 0.0)
    assert torch.all(out.validity[..., -1] == 0.0)
    assert torch.all(out.validity[..., 1:-1] == 1.0)
    assert not out.validity.requires_grad


def test_warp_is_differentiable_in_disparity():
    rng = np.random.default_rng(4)
    src = rand_image(rng, 3, 5, 9)
    d = rand_disparity(rng, 5, 9).requires_grad_(True)
    out = inverse_warp(src, d)
    out.image.sum().backward()
    assert d.grad is not None
    assert torch.isfinite(d.grad).all()
    assert float(d.grad.abs().sum()) > 0.0


def test_warp_input_validation():
    src = torch.rand(1, 3, 4, 8)
    with pytest.raises(ValueError, match="direction"):
        inverse_warp(src, torch.zeros(1, 1, 4, 8), direction="up")
    with pytest.raises(ValueError, match="shape"):
        inverse_warp(src, torch.zeros(1, 1, 4, 9))
    with pytest.raises(ValueError, match="non-finite"):
        inverse_warp(src, torch.full((1, 1, 4, 8), float("nan")))


def test_disparity_depth_round_trip():
    rig = CameraRig(focal_length_px=100.0, baseline_m=0.5)
    d = torch.tensor([[[[1.0, 2.0, 10.0, 25.0]]]], dtype=torch.float64)
    depth = disparity_to_depth(d, rig)
    assert torch.allclose(depth, torch.tensor([[[[50.0, 25.0, 5.0, 2.0]]]], dtype=torch.float64))
    assert torch.allclose(depth_to_disparity(depth, rig), d)


def test_degenerate_disparity_gets_sentinel():
    rig = CameraRig()
    d = torch.tensor([[[[0.0, 1e-9, 1.0]]]], dtype=torch.float64)
    depth = disparity_to_depth(d, rig)
    assert float(depth[0, 0, 0, 0]) == MAX_DEPTH_SENTINEL
    assert float(depth[0, 0, 0, 1]) == MAX_DEPTH_SENTINEL
    assert float(depth[0, 0, 0, 2]) == pytest.approx(50.0)
