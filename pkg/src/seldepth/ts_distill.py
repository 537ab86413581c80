"""Teacher-student feature distillation losses.

A frozen stereo teacher exposes a feature pyramid; the monocular student is
pulled towards it with three complementary terms: elementwise feature
distance (decayed by 0.5 per coarser scale), channel-attention distance
(per-channel spatial means), and similarity distillation on row-normalized
Gram matrices. Teacher features never receive gradient.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from seldepth.config import FeaturePyramid, LossWeights, derive_rng

FD_SCALE_DECAY = 0.5  # weight 0.5^(i-1) for the i-th distillation scale, finest first

# keeps zero Gram rows exactly zero after row normalization
_ROW_NORM_FLOOR = 1e-12


def _check_pair(teacher: FeaturePyramid, student: FeaturePyramid) -> None:
    if len(teacher.levels) != len(student.levels):
        raise ValueError(
            f"pyramid level count mismatch: teacher {len(teacher.levels)} vs student {len(student.levels)}"
        )
    for i, (t, s) in enumerate(zip(teacher.levels, student.levels)):
        if t.shape != s.shape:
            raise ValueError(
                f"level {i} shape mismatch: teacher {tuple(t.shape)} vs student {tuple(s.shape)}"
            )


def resize_teacher(
    teacher: FeaturePyramid,
    student_shapes: Sequence[Tuple[int, int, int]],
    aligner: Optional["TeacherAligner"] = None,
) -> FeaturePyramid:
    """Spatially resize (bilinear) each teacher level to the student's (C, H, W) shapes.

    Channel mismatches need an ``aligner`` (a frozen 1x1 projection fixed at
    construction); without one they are an error.
    """
    if len(teacher.levels) != len(student_shapes):
        raise ValueError(
            f"pyramid level count mismatch: teacher {len(teacher.levels)} vs shapes {len(student_shapes)}"
        )
    out: List[torch.Tensor] = []
    for i, (level, (c, h, w)) in enumerate(zip(teacher.levels, student_shapes)):
        if level.shape[1] != c:
            if aligner is None:
                raise ValueError(
                    f"level {i} channel mismatch ({level.shape[1]} vs {c}) and no aligner given"
                )
            level = aligner(i, level)
            if level.shape[1] != c:
                raise ValueError(f"aligner produced {level.shape[1]} channels at level {i}, want {c}")
        if level.shape[2:] != (h, w):
            level = F.interpolate(level, size=(h, w), mode="bilinear", align_corners=False)
        out.append(level)
    return FeaturePyramid(levels=out, origin="teacher")


class TeacherAligner(nn.Module):
    """Frozen random 1x1 projections mapping teacher channels to student channels.

    Weights are drawn once from a seeded generator and never trained, so the
    alignment is a fixed measurement of the teacher, not a learned adapter.
    """

    def __init__(self, teacher_channels: Sequence[int], student_channels: Sequence[int], seed: int):
        super().__init__()
        if len(teacher_channels) != len(student_channels):
            raise ValueError("channel lists must have equal length")
        projections = []
        for i, (c_t, c_s) in enumerate(zip(teacher_channels, student_channels)):
            if c_t == c_s:
                projections.append(None)
                continue
            conv = nn.Conv2d(c_t, c_s, kernel_size=1, bias=False)
            rng = derive_rng(seed, "teacher-align", i)
            weight = rng.standard_normal(size=conv.weight.shape) / (c_t ** 0.5)
            with torch.no_grad():
                conv.weight.copy_(torch.from_numpy(weight).to(conv.weight.dtype))
            projections.append(conv)
        self.projections = nn.ModuleList([p if p is not None else nn.Identity() for p in projections])
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, level_idx: int, x: torch.Tensor) -> torch.Tensor:
        return self.projections[level_idx](x)


def channel_weights(level: torch.Tensor) -> torch.Tensor:
    """Spatial mean per channel; (B, C, H, W) -> (B, C)."""
    return level.mean(dim=(2, 3))


def similarity_gram(level: torch.Tensor) -> torch.Tensor:
    """Row-normalized channel Gram matrix; (B, C, H, W) -> (B, C, C).

    Rows of Q Q^T are scaled to unit L2 norm; an all-zero row stays exactly
    zero (the norm is floored, and 0 / floor == 0).
    """
    b, c = level.shape[0], level.shape[1]
    q = level.reshape(b, c, -1)
    z = q @ q.transpose(1, 2)
    norms = z.norm(dim=2, keepdim=True).clamp(min=_ROW_NORM_FLOOR)
    return z / norms


def fd_loss(teacher: FeaturePyramid, student: FeaturePyramid) -> torch.Tensor:
    """Elementwise feature distance, decayed by 0.5 per coarser scale."""
    _check_pair(teacher, student)
    total = None
    for i, (t, s) in enumerate(zip(teacher.levels, student.levels)):
        term = (FD_SCALE_DECAY ** i) * (t.detach() - s).abs().mean()
        total = term if total is None else total + term
    return total


def cd_loss(teacher: FeaturePyramid, student: FeaturePyramid) -> torch.Tensor:
    """Channel-attention distance: per-scale mean over channels of |wt_T - wt_S|."""
    _check_pair(teacher, student)
    total = None
    for t, s in zip(teacher.levels, student.levels):
        term = (channel_weights(t.detach()) - channel_weights(s)).abs().mean()
        total = term if total is None else total + term
    return total


def sd_loss(teacher: FeaturePyramid, student: FeaturePyramid) -> torch.Tensor:
    """Similarity distillation: per-scale ||Z~_T - Z~_S||_F / C^2, batch-averaged."""
    _check_pair(teacher, student)
    total = None
    for t, s in zip(teacher.levels, student.levels):
        c = t.shape[1]
        diff = similarity_gram(t.detach()) - similarity_gram(s)
        term = diff.flatten(1).norm(dim=1).mean() / float(c * c)
        total = term if total is None else total + term
    return total


def ts_loss(teacher: FeaturePyramid, student: FeaturePyramid, w: LossWeights = LossWeights()) -> torch.Tensor:
    """Combined distillation objective: L_FD + lambda_cd * L_CD + lambda_sd * L_SD."""
    return fd_loss(teacher, student) + w.lambda_cd * cd_loss(teacher, student) + w.lambda_sd * sd_loss(teacher, student)
