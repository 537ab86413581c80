"""Monocular depth network, mask decoder, student convolutions, frozen teachers.

The encoder is a VGG-style stack: an initial full-resolution block at the
base width, then four (max-pool, double-the-channels) blocks, giving a
5-level pyramid. The student branch mirrors the 4 coarsest levels by summing
a strided carry with the encoder feature and refining (Leaky ReLU inside,
1x1 conv + BN at the end of each block). Two independent decoders, one for
disparity and one for the two selection-mask logit channels, consume the
encoder features (concatenated with student features when the student branch
is enabled) and emit outputs at 4 scales.

Geometry defaults are desk-scale (64x128, base width 8); the full-size
configuration (256x512, base 32) is a config change, not a code change.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from seldepth.config import FeaturePyramid, TrainConfig, config_from_text, config_text, derive_rng
from seldepth import pngio

DISPARITY_FRACTION = 0.3  # max disparity as a fraction of image width
N_ENCODER_LEVELS = 5
N_OUTPUT_SCALES = 4


@dataclass
class MonoNetOutputs:
    """Everything a forward pass produces, finest scale first.

    ``disparities[s]`` has shape (B, 1, H/2^s, W/2^s) and holds disparities
    in that scale's own pixel units (multiply by 2^s when upsampling to full
    resolution). ``mask_logits[s]`` is the (rc, sm) logit pair at the same
    shape. ``student_pyramid`` is None when the student branch is disabled.
    """

    disparities: List[torch.Tensor]
    mask_logits: List[Tuple[torch.Tensor, torch.Tensor]]
    encoder_pyramid: FeaturePyramid
    student_pyramid: Optional[FeaturePyramid]


def _conv_block(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, padding=1),
        nn.ReLU(inplace=True),
        nn.Conv2d(c_out, c_out, 3, padding=1),
        nn.ReLU(inplace=True),
    )


class MonoEncoder(nn.Module):
    """5-level pyramid encoder; spatial dims halve and channels double per level."""

    def __init__(self, base: int = 8, in_channels: int = 3):
        super().__init__()
        self.channels = [base * (2 ** i) for i in range(N_ENCODER_LEVELS)]
        blocks = [_conv_block(in_channels, self.channels[0])]
        for c_in, c_out in zip(self.channels[:-1], self.channels[1:]):
            blocks.append(_conv_block(c_in, c_out))
        self.blocks = nn.ModuleList(blocks)
        self.pool = nn.MaxPool2d(2)

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        levels = [self.blocks[0](x)]
        for block in self.blocks[1:]:
            levels.append(block(self.pool(levels[-1])))
        return levels


class StudentBranch(nn.Module):
    """Student convolutions over the 4 coarsest encoder levels.

    Each scale sums a stride-2 carry of the previous student feature with the
    matching encoder feature, then refines with a 3x3 conv, a 1x1 conv and
    batch norm; Leaky ReLU throughout.
    """

    def __init__(self, encoder_channels: Sequence[int]):
        super().__init__()
        self.channels = list(encoder_channels[1:])  # levels 1..4
        self.stem = nn.Sequential(
            nn.Conv2d(encoder_channels[0], self.channels[0], 3, stride=2, padding=1),
            nn.LeakyReLU(0.1, inplace=True),
        )
        self.carries = nn.ModuleList(
            nn.Sequential(
                nn.Conv2d(c_in, c_out, 3, stride=2, padding=1),
                nn.LeakyReLU(0.1, inplace=True),
            )
            for c_in, c_out in zip(self.channels[:-1], self.channels[1:])
        )
        self.refines = nn.ModuleList(
            nn.Sequential(
                nn.Conv2d(c, c, 3, padding=1),
                nn.LeakyReLU(0.1, inplace=True),
                nn.Conv2d(c, c, 1),
                nn.BatchNorm2d(c),
                nn.LeakyReLU(0.1, inplace=True),
            )
            for c in self.channels
        )

    def forward(self, encoder_levels: Sequence[torch.Tensor]) -> List[torch.Tensor]:
        out = [self.refines[0](self.stem(encoder_levels[0]) + encoder_levels[1])]
        for i, (carry, refine) in enumerate(zip(self.carries, self.refines[1:])):
            out.append(refine(carry(out[-1]) + encoder_levels[i + 2]))
        return out


class _Decoder(nn.Module):
    """Shared decoder trunk: nearest upsampling with skip concatenation, 4 heads."""

    def __init__(self, encoder_channels: Sequence[int], fused_mult: int, head_channels: int, head_bias: float = 0.0):
        super().__init__()
        c = list(encoder_channels)
        self.entry = nn.Sequential(nn.Conv2d(fused_mult * c[4], c[4], 3, padding=1), nn.ReLU(inplace=True))
        skip_ch = [c[0]] + [fused_mult * ci for ci in c[1:4]]  # skips at levels 0..3
        self.stages = nn.ModuleList(
            nn.Sequential(nn.Conv2d(c[s + 1] + skip_ch[s], c[s], 3, padding=1), nn.ReLU(inplace=True))
            for s in range(4)
        )
        self.heads = nn.ModuleList(nn.Conv2d(c[s], head_channels, 3, padding=1) for s in range(4))
        for head in self.heads:
            nn.init.constant_(head.bias, head_bias)

    def forward(self, fused: Sequence[torch.Tensor]) -> List[torch.Tensor]:
        x = self.entry(fused[4])
        raw = [None] * 4
        for s in (3, 2, 1, 0):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = self.stages[s](torch.cat([x, fused[s]], dim=1))
            raw[s] = self.heads[s](x)
        return raw


class MonoNet(nn.Module):
    """Single-image disparity and selection-mask network with optional student branch."""

    def __init__(self, base: int = 8, width: int = 128, ts_enabled: bool = True):
        super().__init__()
        self.width = width
        self.ts_enabled = ts_enabled
        self.encoder = MonoEncoder(base=base)
        self.student = StudentBranch(self.encoder.channels) if ts_enabled else None
        fused_mult = 2 if ts_enabled else 1
        # negative bias starts the sigmoid head at small disparities, i.e. a
        # near-identity warp; a head centered at 0.5 * d_max would begin
        # outside the photometric basin of every plausible match
        self.depth_decoder = _Decoder(self.encoder.channels, fused_mult, head_channels=1, head_bias=-2.0)
        self.mask_decoder = _Decoder(self.encoder.channels, fused_mult, head_channels=2)

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "MonoNet":
        return cls(base=cfg.channel_base, width=cfg.image_width, ts_enabled=cfg.ts_enabled)

    def forward(self, left: torch.Tensor) -> MonoNetOutputs:
        if left.dim() != 4 or left.shape[2] % 16 or left.shape[3] % 16:
            raise ValueError(
                f"input must be (B, C, H, W) with H, W divisible by 16, got {tuple(left.shape)}"
            )
        enc = self.encoder(left)
        student = self.student(enc) if self.student is not None else None
        if student is not None:
            fused = [enc[0]] + [torch.cat([e, s], dim=1) for e, s in zip(enc[1:], student)]
        else:
            fused = enc
        raw_disp = self.depth_decoder(fused)
        raw_mask = self.mask_decoder(fused)
        disparities = [
            DISPARITY_FRACTION * (left.shape[3] / (2 ** s)) * torch.sigmoid(raw_disp[s])
            for s in range(4)
        ]
        mask_logits = [(m[:, 0:1], m[:, 1:2]) for m in raw_mask]
        return MonoNetOutputs(
            disparities=disparities,
            mask_logits=mask_logits,
            encoder_pyramid=FeaturePyramid(levels=enc, origin="student"),
            student_pyramid=FeaturePyramid(levels=student, origin="student") if student is not None else None,
        )


class SyntheticTeacher(nn.Module):
    """Frozen seeded stereo encoder standing in for a pretrained stereo network.

    Consumes the concatenated left/right pair and emits a 4-level pyramid at
    the student's distillation resolutions (H/2 .. H/16). Channel widths are
    deliberately different from the student's so the fixed 1x1 alignment path
    is always exercised. Parameters are drawn once from a seeded generator
    and never updated.
    """

    def __init__(self, seed: int, base: int = 12):
        super().__init__()
        self.channels = [base * (2 ** i) for i in range(4)]
        layers = []
        c_in = 6
        for c_out in self.channels:
            layers.append(
                nn.Sequential(
                    nn.Conv2d(c_in, c_out, 3, stride=2, padding=1),
                    nn.LeakyReLU(0.1),
                    nn.Conv2d(c_out, c_out, 3, padding=1),
                    nn.LeakyReLU(0.1),
                )
            )
            c_in = c_out
        self.layers = nn.ModuleList(layers)
        rng = derive_rng(seed, "synthetic-teacher")
        with torch.no_grad():
            for p in self.parameters():
                vals = rng.standard_normal(size=tuple(p.shape)) * 0.2
                p.copy_(torch.from_numpy(vals).to(p.dtype))
        for p in self.parameters():
            p.requires_grad_(False)

    def proxy_disparity(self, sample) -> torch.Tensor:
        """The dataset-provided proxy; this teacher does not run stereo matching."""
        if sample.proxy_disparity is None:
            raise ValueError(f"sample {sample.id!r} carries no proxy disparity")
        return sample.proxy_disparity

    def features(self, left: torch.Tensor, right: torch.Tensor) -> FeaturePyramid:
        """Pyramid over the concatenated batched pair; always gradient-free."""
        with torch.no_grad():
            x = torch.cat([left, right], dim=1)
            levels = []
            for layer in self.layers:
                x = layer(x)
                levels.append(x)
        return FeaturePyramid(levels=levels, origin="teacher")

    def teacher_features(self, sample) -> FeaturePyramid:
        if sample.right is None:
            raise ValueError(f"sample {sample.id!r} has no right image; teacher needs the pair")
        left, right = sample.left, sample.right
        if left.dim() == 3:
            left, right = left.unsqueeze(0), right.unsqueeze(0)
        return self.features(left, right)


class FileProxy:
    """Proxy provider reading precomputed 16-bit disparity PNGs from a directory.

    Feature queries fall back to a synthetic frozen teacher (file-based
    teachers would need the original network, which is out of scope).
    """

    def __init__(self, root, feature_teacher: Optional[SyntheticTeacher] = None, seed: int = 0):
        self.root = Path(root)
        if not self.root.is_dir():
            raise FileNotFoundError(f"proxy directory not found: {self.root}")
        self._teacher = feature_teacher if feature_teacher is not None else SyntheticTeacher(seed)

    def proxy_disparity(self, sample) -> torch.Tensor:
        path = self.root / f"{sample.id}.png"
        if not path.is_file():
            raise FileNotFoundError(f"missing proxy disparity: {path}")
        d = pngio.load_disparity_png(path)
        return d.unsqueeze(0).unsqueeze(0) if d.dim() == 2 else d

    def teacher_features(self, sample) -> FeaturePyramid:
        return self._teacher.teacher_features(sample)


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def parameter_hash(module: nn.Module) -> str:
    """SHA-256 over all parameter bytes in state-dict order; detects any drift."""
    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(path, model: nn.Module, optimizer, epoch: int, cfg: TrainConfig) -> None:
    """One archive: model + optimizer state, epoch counter, config snapshot."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "config_text": config_text(cfg),
    }
    torch.save(payload, path)


def load_checkpoint(path):
    """Returns (state dict payload, parsed TrainConfig)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    return payload, config_from_text(payload["config_text"])
