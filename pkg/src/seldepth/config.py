"""Shared domain types, the flat config schema, and deterministic seeding.

Config files are flat ``key = value`` text (one key per line, ``#`` comments)
so that experiment logs diff cleanly. Every hyperparameter defaults to the
published training recipe; ablations are runnable by config alone.

Tensor conventions used across the package:
  images       float tensors (B, 3, H, W), values in [0, 1]
  disparities  float tensors (B, 1, H, W), >= 0, units = pixels of horizontal
               shift at the map's own resolution
  masks/logits float tensors (B, 1, H, W)
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch


class ConfigError(ValueError):
    """Raised for unknown keys, malformed values, or out-of-range settings."""


@dataclass(frozen=True)
class CameraRig:
    """Rectified stereo geometry: depth = focal_length_px * baseline_m / disparity."""

    focal_length_px: float = 100.0
    baseline_m: float = 0.5

    def __post_init__(self):
        if not (self.focal_length_px > 0 and self.baseline_m > 0):
            raise ConfigError("CameraRig requires positive focal_length_px and baseline_m")


@dataclass(frozen=True)
class LossWeights:
    """Balancing weights of the total objective.

    alpha trades the patch-correlation term against L1 inside the
    reconstruction loss; lambda_ts is zero when the teacher-student module
    is disabled.
    """

    alpha: float = 0.85
    lambda_mask: float = 1.0
    lambda_ts: float = 1e-4
    lambda_cd: float = 1.0
    lambda_sd: float = 1e5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        for name in ("lambda_mask", "lambda_ts", "lambda_cd", "lambda_sd"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")


# Flat key-value schema. Types: f float, i int, b bool, s string, il int list.
_SCHEMA = {
    "alpha": "f",
    "lambda_mask": "f",
    "lambda_ts": "f",
    "lambda_cd": "f",
    "lambda_sd": "f",
    "lr": "f",
    "epochs": "i",
    "lr_halve_epochs": "il",
    "batch_size": "i",
    "image_height": "i",
    "image_width": "i",
    "channel_base": "i",
    "seed": "i",
    "dataset_root": "s",
    "proxy_mode": "s",
    "distill_mode": "s",
    "ts_enabled": "b",
    "adam_beta1": "f",
    "adam_beta2": "f",
    "adam_eps": "f",
    "grad_clip": "f",
    "mask_warmup_epochs": "i",
    "direct_loss": "s",
    "crop_bottom": "f",
}

_CHOICES = {
    "proxy_mode": ("file", "synthetic"),
    "distill_mode": ("direct", "selective"),
    "direct_loss": ("l1", "berhu"),
}


@dataclass
class TrainConfig:
    """Full training configuration; defaults follow the published recipe."""

    alpha: float = 0.85
    lambda_mask: float = 1.0
    lambda_ts: float = 1e-4
    lambda_cd: float = 1.0
    lambda_sd: float = 1e5
    lr: float = 1e-4
    epochs: int = 50
    lr_halve_epochs: List[int] = field(default_factory=lambda: [20, 35, 45])
    batch_size: int = 8
    image_height: int = 256
    image_width: int = 512
    channel_base: int = 32
    seed: int = 0
    dataset_root: str = ""
    proxy_mode: str = "file"
    distill_mode: str = "selective"
    ts_enabled: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 10.0
    mask_warmup_epochs: int = 0
    direct_loss: str = "l1"
    crop_bottom: float = 0.0
    scales: int = 4  # decoder output scales; fixed by the architecture

    @property
    def weights(self) -> LossWeights:
        return LossWeights(
            alpha=self.alpha,
            lambda_mask=self.lambda_mask,
            lambda_ts=self.lambda_ts if self.ts_enabled else 0.0,
            lambda_cd=self.lambda_cd,
            lambda_sd=self.lambda_sd,
        )

    def validate(self) -> "TrainConfig":
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("value out of range for key 'alpha' (must be in [0, 1])")
        for key in ("lambda_mask", "lambda_ts", "lambda_cd", "lambda_sd"):
            if getattr(self, key) < 0:
                raise ConfigError(f"value out of range for key '{key}' (must be >= 0)")
        if self.lr <= 0:
            raise ConfigError("value out of range for key 'lr' (must be > 0)")
        if self.epochs < 1:
            raise ConfigError("value out of range for key 'epochs' (must be >= 1)")
        if self.batch_size < 1:
            raise ConfigError("value out of range for key 'batch_size' (must be >= 1)")
        for key in ("image_height", "image_width"):
            v = getattr(self, key)
            if v < 16 or v % 16 != 0:
                raise ConfigError(f"value out of range for key '{key}' (must be a positive multiple of 16)")
        if self.channel_base < 1:
            raise ConfigError("value out of range for key 'channel_base' (must be >= 1)")
        if not 0.0 <= self.crop_bottom < 1.0:
            raise ConfigError("value out of range for key 'crop_bottom' (must be in [0, 1))")
        if self.mask_warmup_epochs < 0:
            raise ConfigError("value out of range for key 'mask_warmup_epochs' (must be >= 0)")
        if self.grad_clip < 0:
            raise ConfigError("value out of range for key 'grad_clip' (must be >= 0)")
        for key, choices in _CHOICES.items():
            if getattr(self, key) not in choices:
                raise ConfigError(f"value out of range for key '{key}' (must be one of {choices})")
        if any(e < 0 for e in self.lr_halve_epochs):
            raise ConfigError("value out of range for key 'lr_halve_epochs' (epochs must be >= 0)")
        return self

    @property
    def ts_active(self) -> bool:
        """The teacher-student module counts only when it carries weight."""
        return self.ts_enabled and self.lambda_ts > 0


def _parse_value(key: str, raw: str):
    kind = _SCHEMA[key]
    try:
        if kind == "f":
            return float(raw)
        if kind == "i":
            return int(raw)
        if kind == "b":
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "il":
            raw = raw.strip()
            return [int(tok) for tok in raw.split(",") if tok.strip()] if raw else []
        return raw
    except ValueError as exc:
        raise ConfigError(f"malformed value for key '{key}': {raw!r}") from exc


def load_config(path) -> TrainConfig:
    """Parse a flat key-value config file; unset keys take the paper defaults.

    Setting ``lambda_ts = 0`` disables the teacher-student module; setting
    ``ts_enabled = false`` forces ``lambda_ts`` to zero.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key '{key}'")
        values[key] = _parse_value(key, raw)

    cfg = replace(TrainConfig(), **values)
    if "lambda_ts" in values and values["lambda_ts"] == 0.0 and "ts_enabled" not in values:
        cfg.ts_enabled = False
    if not cfg.ts_enabled:
        cfg.lambda_ts = 0.0
    return cfg.validate()


def save_config(cfg: TrainConfig, path) -> None:
    """Serialize to the same flat schema; load(save(cfg)) == cfg."""
    lines = []
    for f in fields(cfg):
        if f.name not in _SCHEMA:
            continue
        v = getattr(cfg, f.name)
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")


def config_text(cfg: TrainConfig) -> str:
    """The canonical flat-text form, used for checkpoint snapshots."""
    lines = []
    for f in fields(cfg):
        if f.name not in _SCHEMA:
            continue
        v = getattr(cfg, f.name)
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> TrainConfig:
    """Inverse of :func:`config_text` (parses the same schema from a string)."""
    values = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key '{key}' in config snapshot")
        values[key] = _parse_value(key, raw)
    cfg = replace(TrainConfig(), **values)
    if not cfg.ts_enabled:
        cfg.lambda_ts = 0.0
    return cfg.validate()


def seed_everything(seed: int) -> None:
    """Seed python, numpy and torch, and force deterministic kernels.

    Together with the per-(epoch, sample) derived streams below this makes
    same-seed runs bitwise reproducible on CPU.
    """
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def derive_seed(base_seed: int, *keys) -> int:
    """Stable stream id from (base seed, string/int keys); independent of PYTHONHASHSEED."""
    h = hashlib.sha256()
    h.update(str(int(base_seed)).encode())
    for k in keys:
        h.update(b"/")
        h.update(str(k).encode())
    return int.from_bytes(h.digest()[:8], "little")


def derive_rng(base_seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base_seed, *keys))


def check_image(t: torch.Tensor, name: str = "image") -> torch.Tensor:
    """Validate the (B, 3, H, W), finite, [0, 1] image contract."""
    if t.dim() != 4 or t.shape[1] != 3:
        raise ValueError(f"{name}: expected a (B, 3, H, W) tensor, got {tuple(t.shape)}")
    if not torch.isfinite(t).all():
        raise ValueError(f"{name}: contains non-finite values")
    if t.min() < 0 or t.max() > 1:
        raise ValueError(f"{name}: values must lie in [0, 1]")
    return t


def check_disparity(t: torch.Tensor, name: str = "disparity") -> torch.Tensor:
    """Validate the (B, 1, H, W), finite, 0 <= d <= W disparity contract."""
    if t.dim() != 4 or t.shape[1] != 1:
        raise ValueError(f"{name}: expected a (B, 1, H, W) tensor, got {tuple(t.shape)}")
    if not torch.isfinite(t).all():
        raise ValueError(f"{name}: contains non-finite values")
    if t.min() < 0:
        raise ValueError(f"{name}: disparities must be >= 0")
    if t.max() > t.shape[-1]:
        raise ValueError(f"{name}: disparities must not exceed the image width")
    return t


@dataclass
class SelectionMask:
    """Per-pixel binary selector with its underlying soft logits.

    ``hard`` is 1 exactly where sigmoid(logits) >= 0.5; gradient flows
    through the soft relaxation (see selection.form_virtual_disparity).
    """

    logits: torch.Tensor  # (B, 1, H, W)
    role: str = "rc"  # "rc" | "sm"

    def __post_init__(self):
        if self.role not in ("rc", "sm"):
            raise ValueError(f"SelectionMask role must be 'rc' or 'sm', got {self.role!r}")
        if self.logits.dim() != 4 or self.logits.shape[1] != 1:
            raise ValueError(f"SelectionMask logits must be (B, 1, H, W), got {tuple(self.logits.shape)}")

    @property
    def soft(self) -> torch.Tensor:
        return torch.sigmoid(self.logits)

    @property
    def hard(self) -> torch.Tensor:
        """Detached {0,1} mask; 1 iff sigmoid(logits) >= 0.5."""
        with torch.no_grad():
            return (torch.sigmoid(self.logits) >= 0.5).to(self.logits.dtype)


@dataclass
class FeaturePyramid:
    """Ordered multi-scale feature volumes, finest first; each (B, C_i, H_i, W_i)."""

    levels: List[torch.Tensor]
    origin: str = "student"  # "teacher" | "student"

    def __post_init__(self):
        if self.origin not in ("teacher", "student"):
            raise ValueError(f"FeaturePyramid origin must be 'teacher' or 'student', got {self.origin!r}")

    def shapes(self):
        return [tuple(t.shape[1:]) for t in self.levels]

    def check_contract(self) -> "FeaturePyramid":
        """Spatial dims halve and channels double from level to level."""
        for a, b in zip(self.levels, self.levels[1:]):
            ca, ha, wa = a.shape[1:]
            cb, hb, wb = b.shape[1:]
            if cb != 2 * ca or hb * 2 != ha or wb * 2 != wa:
                raise ValueError(
                    f"pyramid contract violated: ({ca},{ha},{wa}) -> ({cb},{hb},{wb})"
                )
        return self
