"""Synthetic stereo data with analytic ground truth, plus dataset IO.

Scenes are layered fronto-parallel textured boxes over a textured background.
Each layer has a constant integer disparity, so the right view is an exact
horizontal shift of the layer texture and ground truth is known analytically,
including which pixels are occluded in the other view. A corruption operator
damages the ground truth inside chosen regions to model unreliable proxy
disparities.

On-disk layout (KITTI-style, 16-bit x256 disparity PNGs):

    root/calib.txt                      focal_px= / baseline_m= lines
    root/{split}/left/{id}.png          8-bit RGB
    root/{split}/right/{id}.png
    root/{split}/proxy/{id}.png         16-bit disparity
    root/{split}/gt/{id}.png            optional
    root/{split}/{gt_right,proxy_right,occlusion,occlusion_right,corrupt}/
                                        optional metadata, same id scheme
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np
import torch

from seldepth.config import CameraRig, derive_rng
from seldepth import pngio

BLUR_KERNEL = 5
# (sigma_in, sigma_out, amplitude) difference-of-Gaussian octaves; amplitudes
# fall off with scale like a natural-image spectrum
TEXTURE_OCTAVES = ((3.5, 8.5, 1.0), (8.5, 20.0, 0.5))
_FLAT_PATCH = 5  # side of the deliberately textureless square per scene


@dataclass
class StereoSample:
    """One rectified stereo pair with proxy supervision and test-only metadata.

    Images are (3, H, W) in [0, 1]; disparity and mask maps are (1, H, W).
    ``occlusion`` flags left-view pixels invisible in the right view (and
    vice versa for ``occlusion_right``); ``corrupt_mask`` flags pixels whose
    proxy was deliberately damaged. The trainer never reads the metadata
    fields; they exist for oracles and diagnostics.
    """

    id: str
    left: torch.Tensor
    right: torch.Tensor
    proxy_disparity: Optional[torch.Tensor] = None
    gt_disparity: Optional[torch.Tensor] = None
    rig: CameraRig = field(default_factory=CameraRig)
    gt_right: Optional[torch.Tensor] = None
    proxy_right: Optional[torch.Tensor] = None
    occlusion: Optional[torch.Tensor] = None
    occlusion_right: Optional[torch.Tensor] = None
    corrupt_mask: Optional[torch.Tensor] = None

    def __post_init__(self):
        if self.left.shape != self.right.shape:
            raise ValueError(f"left/right shape mismatch: {tuple(self.left.shape)} vs {tuple(self.right.shape)}")
        for name in ("proxy_disparity", "gt_disparity"):
            m = getattr(self, name)
            if m is not None and m.shape[-2:] != self.left.shape[-2:]:
                raise ValueError(f"{name} spatial shape {tuple(m.shape[-2:])} != image {tuple(self.left.shape[-2:])}")


@dataclass
class CorruptionSpec:
    """Where and how to damage a proxy disparity map.

    ``regions`` are (y0, x0, h, w) rectangles in image coordinates; ``mode``
    is one of zero (erase), blur (box blur, kernel 5), offset (add
    ``offset`` pixels of disparity).
    """

    regions: List[Tuple[int, int, int, int]]
    mode: str = "offset"
    offset: float = 4.0
    seed: int = 0

    def validate(self, height: int, width: int) -> "CorruptionSpec":
        if self.mode not in ("zero", "blur", "offset"):
            raise ValueError(f"corruption mode must be zero|blur|offset, got {self.mode!r}")
        for y0, x0, h, w in self.regions:
            if y0 < 0 or x0 < 0 or h <= 0 or w <= 0 or y0 + h > height or x0 + w > width:
                raise ValueError(f"region {(y0, x0, h, w)} out of bounds for {height}x{width}")
        return self

    def mask(self, height: int, width: int) -> torch.Tensor:
        m = torch.zeros(1, height, width)
        for y0, x0, h, w in self.regions:
            m[:, y0 : y0 + h, x0 : x0 + w] = 1.0
        return m


def _band_limited_texture(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Seeded multi-octave band-pass noise in (0.05, 0.95), (3, height, width).

    Each octave is a difference of Gaussians: patch correlation then decays
    near-monotonically with horizontal shift, so a warp drifting off the true
    disparity degrades steadily instead of aliasing back into partial
    matches. Stacking octaves keeps that decay going out to the coarsest
    scale, which is what lets a badly initialized disparity still feel a
    downhill direction. tanh squashing instead of clipping keeps every patch
    strictly non-constant; hard saturation would create zero-variance patches
    that the correlation convention scores as mismatches even under a
    perfect warp.
    """
    noise = rng.standard_normal((height, width, 3)).astype(np.float32)
    band = np.zeros_like(noise)
    for sigma_in, sigma_out, amplitude in TEXTURE_OCTAVES:
        octave = cv2.GaussianBlur(noise, (0, 0), sigma_in) - cv2.GaussianBlur(noise, (0, 0), sigma_out)
        band += amplitude * octave / max(float(octave.std()), 1e-6)
    band = band / max(float(band.std()), 1e-6)
    return (0.5 + 0.45 * np.tanh(0.5 * band)).transpose(2, 0, 1)


def layered_scene(
    seed: int,
    height: int,
    width: int,
    bg_disparity: int,
    boxes: Sequence[Tuple[int, int, int, int, int]],
    rig: CameraRig = CameraRig(),
    sample_id: str = "scene",
    flat_patch: bool = True,
) -> StereoSample:
    """Compose a stereo pair from a background plus (y0, x0, h, w, disparity) boxes.

    Boxes must come in strictly increasing disparity order (nearest last);
    painting order then equals depth order in both views. All disparities are
    integers, so the pair is an exact shift of shared textures and the
    analytic ground truth satisfies the warp identity outside occlusions.
    """
    if height % 16 or width % 16:
        raise ValueError(f"height and width must be divisible by 16, got {height}x{width}")
    disparities = [bg_disparity] + [b[4] for b in boxes]
    if any(d <= 0 for d in disparities):
        raise ValueError("disparities must be positive")
    if any(b <= a for a, b in zip(disparities, disparities[1:])):
        raise ValueError("box disparities must strictly increase (nearest last)")
    margin = width // 2  # extra texture width; bounds the maximum disparity
    if max(disparities) >= margin:
        raise ValueError(f"disparities must stay below width // 2 (= {margin})")

    rng = derive_rng(seed, "scene", sample_id)
    tex_w = width + margin
    left = np.zeros((3, height, width), dtype=np.float32)
    right = np.zeros_like(left)
    gt_l = np.zeros((height, width), dtype=np.int64)
    gt_r = np.zeros_like(gt_l)

    # each layer spans rows [y0, y1) and texture columns [u0, u1); the left
    # view shows texture column u at pixel u, the right view at pixel u - d
    layers = [(0, height, 0, tex_w - bg_disparity, bg_disparity)]
    for y0, x0, bh, bw, d in boxes:
        if y0 < 0 or x0 < 0 or y0 + bh > height or x0 + bw > width:
            raise ValueError(f"box {(y0, x0, bh, bw)} out of bounds for {height}x{width}")
        layers.append((y0, y0 + bh, x0, x0 + bw, d))
    for idx, (y0, y1, u0, u1, d) in enumerate(layers):
        tex = _band_limited_texture(rng, height, tex_w)
        if idx == 0 and flat_patch:
            py = int(rng.integers(0, height - _FLAT_PATCH))
            px = int(rng.integers(0, tex_w - _FLAT_PATCH))
            patch = tex[:, py : py + _FLAT_PATCH, px : px + _FLAT_PATCH]
            tex[:, py : py + _FLAT_PATCH, px : px + _FLAT_PATCH] = patch.mean(axis=(1, 2), keepdims=True)
        lx0, lx1 = max(u0, 0), min(u1, width)
        if lx1 > lx0:
            left[:, y0:y1, lx0:lx1] = tex[:, y0:y1, lx0:lx1]
            gt_l[y0:y1, lx0:lx1] = d
        rx0, rx1 = max(u0 - d, 0), min(u1 - d, width)
        if rx1 > rx0:
            right[:, y0:y1, rx0:rx1] = tex[:, y0:y1, rx0 + d : rx1 + d]
            gt_r[y0:y1, rx0:rx1] = d

    xs = np.arange(width)
    # left pixel x sees right pixel x - d; occluded if a nearer layer owns it there
    x_in_right = xs[None, :] - gt_l
    visible = x_in_right >= 0
    occ_l = np.zeros_like(gt_l, dtype=bool)
    occ_l[visible] = np.take_along_axis(gt_r, np.clip(x_in_right, 0, width - 1), axis=1)[visible] != gt_l[visible]
    x_in_left = xs[None, :] + gt_r
    visible_r = x_in_left <= width - 1
    occ_r = np.zeros_like(gt_r, dtype=bool)
    occ_r[visible_r] = np.take_along_axis(gt_l, np.clip(x_in_left, 0, width - 1), axis=1)[visible_r] != gt_r[visible_r]

    def _map(a, dtype=np.float32):
        return torch.from_numpy(a.astype(dtype)).unsqueeze(0)

    gt_l_t = _map(gt_l)
    gt_r_t = _map(gt_r)
    return StereoSample(
        id=sample_id,
        left=torch.from_numpy(left),
        right=torch.from_numpy(right),
        proxy_disparity=gt_l_t.clone(),
        gt_disparity=gt_l_t,
        rig=rig,
        gt_right=gt_r_t,
        proxy_right=gt_r_t.clone(),
        occlusion=_map(occ_l),
        occlusion_right=_map(occ_r),
    )


def generate_scene(seed: int, height: int, width: int, rig: CameraRig = CameraRig(), sample_id: Optional[str] = None) -> StereoSample:
    """Random layered scene: background plus 1-3 boxes.

    Disparities balance two costs that both scale with magnitude: the
    background sets the width of the left border strip that never sees a
    valid warp, and each per-box step sets the width of the occlusion band
    it casts; neither region carries photometric signal. The background
    still scales with width so predictions land within reach of a
    0.3*width sigmoid head instead of deep in its tail.
    """
    rng = derive_rng(seed, "layout")
    bg_lo = max(1, width // 20)
    bg = int(rng.integers(bg_lo, max(bg_lo + 1, width // 12 + 1)))
    inc_lo = max(2, width // 64)
    inc_hi = max(inc_lo, width // 40)
    n_boxes = int(rng.integers(1, 3))
    boxes = []
    d = bg
    for _ in range(n_boxes):
        d += int(rng.integers(inc_lo, inc_hi + 1))
        bh = int(rng.integers(height // 5, height // 2))
        bw = int(rng.integers(width // 6, width // 3))
        y0 = int(rng.integers(0, height - bh + 1))
        x0 = int(rng.integers(d, width - bw + 1))  # keep the box fully visible in both views
        boxes.append((y0, x0, bh, bw, d))
    return layered_scene(
        seed, height, width, bg, boxes, rig=rig, sample_id=sample_id if sample_id is not None else f"{seed:06d}"
    )


def corrupt_proxy(gt: torch.Tensor, spec: CorruptionSpec) -> torch.Tensor:
    """Damage ``gt`` inside the spec's regions; bitwise equal to gt outside."""
    squeeze = gt.dim() == 2
    d = gt.unsqueeze(0) if squeeze else gt
    h, w = d.shape[-2:]
    spec.validate(h, w)
    out = d.clone()
    if spec.mode == "blur":
        arr = (d[0] if d.dim() == 3 else d[0, 0]).detach().cpu().numpy()
        blurred = torch.from_numpy(cv2.blur(arr.astype(np.float32), (BLUR_KERNEL, BLUR_KERNEL))).to(d.dtype)
    for y0, x0, rh, rw in spec.regions:
        sl = (..., slice(y0, y0 + rh), slice(x0, x0 + rw))
        if spec.mode == "zero":
            out[sl] = 0.0
        elif spec.mode == "offset":
            out[sl] = out[sl] + spec.offset
        else:
            out[sl] = blurred[sl[-2:]]
    return out.squeeze(0) if squeeze else out


def random_corruption(
    seed: int, height: int, width: int, fraction: float = 0.25, mode: str = "offset", offset: float = 4.0, x_min: int = 0
) -> CorruptionSpec:
    """Random rectangles covering approximately ``fraction`` of the image.

    ``x_min`` keeps rectangles out of the leftmost columns; mask probes use
    it because the strip narrower than the scene's disparity never receives
    a valid warp, so no photometric evidence about the proxy exists there.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"fraction must be in [0, 1), got {fraction}")
    rng = derive_rng(seed, "corrupt")
    covered = np.zeros((height, width), dtype=bool)
    regions: List[Tuple[int, int, int, int]] = []
    target = fraction * height * width
    while covered.sum() < target and fraction > 0:
        rh = int(rng.integers(height // 8, height // 3 + 1))
        rw = int(rng.integers(width // 8, width // 3 + 1))
        y0 = int(rng.integers(0, height - rh + 1))
        x0 = int(rng.integers(x_min, width - rw + 1))
        regions.append((y0, x0, rh, rw))
        covered[y0 : y0 + rh, x0 : x0 + rw] = True
    return CorruptionSpec(regions=regions, mode=mode, offset=offset, seed=seed).validate(height, width)


def apply_corruption(sample: StereoSample, spec: CorruptionSpec) -> StereoSample:
    """Corrupt both views' proxies with the same regions; records the mask."""
    if sample.gt_disparity is None:
        raise ValueError(f"sample {sample.id!r} has no ground truth to corrupt")
    h, w = sample.left.shape[-2:]
    proxy = corrupt_proxy(sample.gt_disparity, spec)
    proxy_r = corrupt_proxy(sample.gt_right, spec) if sample.gt_right is not None else None
    return replace(sample, proxy_disparity=proxy, proxy_right=proxy_r, corrupt_mask=spec.mask(h, w))


def _hflip(t: Optional[torch.Tensor]) -> Optional[torch.Tensor]:
    return None if t is None else torch.flip(t, dims=[-1])


def flip_sample(sample: StereoSample) -> StereoSample:
    """Mirror both views and swap them; the flipped pair is again rectified.

    The mirrored right view becomes the new left view, so its disparity maps
    are the flipped right-view maps (exact when the generator provided them;
    otherwise the flipped left-view map is used as an approximation).
    """
    new_gt = _hflip(sample.gt_right) if sample.gt_right is not None else _hflip(sample.gt_disparity)
    new_gt_right = _hflip(sample.gt_disparity)
    new_proxy = _hflip(sample.proxy_right) if sample.proxy_right is not None else _hflip(sample.proxy_disparity)
    new_proxy_right = _hflip(sample.proxy_disparity)
    return replace(
        sample,
        left=_hflip(sample.right),
        right=_hflip(sample.left),
        gt_disparity=new_gt,
        gt_right=new_gt_right,
        proxy_disparity=new_proxy,
        proxy_right=new_proxy_right,
        occlusion=_hflip(sample.occlusion_right) if sample.occlusion_right is not None else None,
        occlusion_right=_hflip(sample.occlusion) if sample.occlusion is not None else None,
        corrupt_mask=_hflip(sample.corrupt_mask),
    )


def augment(sample: StereoSample, seed: int) -> StereoSample:
    """Random horizontal flip (with view swap) plus per-channel color gain.

    Randomness is derived from (seed, sample id), so the same sample under
    the same seed augments identically regardless of processing order.
    """
    rng = derive_rng(seed, "augment", sample.id)
    if rng.random() < 0.5:
        sample = flip_sample(sample)
    gains = torch.from_numpy(0.9 + 0.2 * rng.random(3).astype(np.float32)).view(3, 1, 1)
    return replace(
        sample,
        left=(sample.left * gains).clamp(0.0, 1.0),
        right=(sample.right * gains).clamp(0.0, 1.0),
    )


def write_calib(root, rig: CameraRig) -> None:
    Path(root).mkdir(parents=True, exist_ok=True)
    (Path(root) / "calib.txt").write_text(f"focal_px={rig.focal_length_px}\nbaseline_m={rig.baseline_m}\n")


def read_calib(root) -> CameraRig:
    path = Path(root) / "calib.txt"
    if not path.is_file():
        raise FileNotFoundError(f"missing calibration file: {path}")
    values: Dict[str, float] = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, raw = line.partition("=")
        values[key.strip()] = float(raw.strip())
    try:
        return CameraRig(focal_length_px=values["focal_px"], baseline_m=values["baseline_m"])
    except KeyError as e:
        raise ValueError(f"calibration file {path} missing key {e.args[0]!r}")


_OPTIONAL_DIRS = {
    "gt": "gt_disparity",
    "gt_right": "gt_right",
    "proxy_right": "proxy_right",
}
_OPTIONAL_MASK_DIRS = {
    "occlusion": "occlusion",
    "occlusion_right": "occlusion_right",
    "corrupt": "corrupt_mask",
}


def save_dataset(root, split: str, samples: Sequence[StereoSample], rig: Optional[CameraRig] = None) -> None:
    """Write samples under root/{split}/...; metadata dirs only when present."""
    root = Path(root)
    if rig is None:
        rig = samples[0].rig if samples else CameraRig()
    write_calib(root, rig)
    base = root / split
    for s in samples:
        pngio.save_image_png(base / "left" / f"{s.id}.png", s.left)
        pngio.save_image_png(base / "right" / f"{s.id}.png", s.right)
        if s.proxy_disparity is None:
            raise ValueError(f"sample {s.id!r} has no proxy disparity to save")
        pngio.save_disparity_png(base / "proxy" / f"{s.id}.png", s.proxy_disparity)
        for dirname, attr in _OPTIONAL_DIRS.items():
            m = getattr(s, attr)
            if m is not None:
                pngio.save_disparity_png(base / dirname / f"{s.id}.png", m)
        for dirname, attr in _OPTIONAL_MASK_DIRS.items():
            m = getattr(s, attr)
            if m is not None:
                pngio.save_mask_png(base / dirname / f"{s.id}.png", m)


def load_dataset(root, split: str, proxy_mode: str = "file", crop_bottom: float = 0.0) -> List[StereoSample]:
    """Load a split in lexicographic id order; errors name the missing path.

    Missing gt is tolerated. A missing proxy map is tolerated only with
    ``proxy_mode="synthetic"``, where the proxy is synthesized by damaging
    the ground truth with a seeded offset corruption.
    """
    root = Path(root)
    base = root / split
    if not base.is_dir():
        raise FileNotFoundError(f"missing split directory: {base}")
    left_dir = base / "left"
    if not left_dir.is_dir():
        return []
    ids = sorted(p.stem for p in left_dir.glob("*.png"))
    if not ids:
        return []
    rig = read_calib(root)

    samples = []
    for sid in ids:
        right_path = base / "right" / f"{sid}.png"
        if not right_path.is_file():
            raise FileNotFoundError(f"missing right image: {right_path}")
        left = pngio.load_image_png(left_dir / f"{sid}.png")
        right = pngio.load_image_png(right_path)

        def _opt_disp(dirname):
            p = base / dirname / f"{sid}.png"
            return pngio.load_disparity_png(p).unsqueeze(0) if p.is_file() else None

        def _opt_mask(dirname):
            p = base / dirname / f"{sid}.png"
            return pngio.load_mask_png(p).unsqueeze(0) if p.is_file() else None

        gt = _opt_disp("gt")
        proxy = _opt_disp("proxy")
        corrupt_mask = _opt_mask("corrupt")
        if proxy is None:
            if proxy_mode != "synthetic":
                raise FileNotFoundError(f"missing proxy disparity: {base / 'proxy' / (sid + '.png')}")
            if gt is None:
                raise FileNotFoundError(f"missing ground truth to synthesize proxy from: {base / 'gt' / (sid + '.png')}")
            h, w = gt.shape[-2:]
            spec = random_corruption(derive_seed_for_id(sid), h, w)
            proxy = corrupt_proxy(gt, spec)
            corrupt_mask = spec.mask(h, w)

        sample = StereoSample(
            id=sid,
            left=left,
            right=right,
            proxy_disparity=proxy,
            gt_disparity=gt,
            rig=rig,
            gt_right=_opt_disp("gt_right"),
            proxy_right=_opt_disp("proxy_right"),
            occlusion=_opt_mask("occlusion"),
            occlusion_right=_opt_mask("occlusion_right"),
            corrupt_mask=corrupt_mask,
        )
        if crop_bottom > 0:
            sample = _crop_bottom(sample, crop_bottom)
        samples.append(sample)
    return samples


def derive_seed_for_id(sample_id: str) -> int:
    """Stable small seed from a sample id (for synthesized proxies)."""
    from seldepth.config import derive_seed

    return derive_seed(0, "proxy-from-id", sample_id) % (2 ** 31)


def _crop_bottom(sample: StereoSample, fraction: float) -> StereoSample:
    h = sample.left.shape[-2]
    new_h = max(((h - int(round(h * fraction))) // 16) * 16, 16)

    def crop(t):
        return None if t is None else t[..., :new_h, :]

    return replace(
        sample,
        left=crop(sample.left),
        right=crop(sample.right),
        proxy_disparity=crop(sample.proxy_disparity),
        gt_disparity=crop(sample.gt_disparity),
        gt_right=crop(sample.gt_right),
        proxy_right=crop(sample.proxy_right),
        occlusion=crop(sample.occlusion),
        occlusion_right=crop(sample.occlusion_right),
        corrupt_mask=crop(sample.corrupt_mask),
    )


def collate(samples: Sequence[StereoSample]) -> Dict[str, object]:
    """Stack samples into batched tensors; optional fields batch only if all present."""
    if not samples:
        raise ValueError("cannot collate an empty batch")
    out: Dict[str, object] = {
        "ids": [s.id for s in samples],
        "left": torch.stack([s.left for s in samples]),
        "right": torch.stack([s.right for s in samples]),
        "proxy": torch.stack([s.proxy_disparity for s in samples]),
        "rig": samples[0].rig,
    }
    for key, attr in (("gt", "gt_disparity"), ("occlusion", "occlusion"), ("corrupt", "corrupt_mask")):
        vals = [getattr(s, attr) for s in samples]
        out[key] = torch.stack(vals) if all(v is not None for v in vals) else None
    return out
