"""Monocular depth estimation trained from stereo proxy disparities.

The proxy supervision is gated per pixel by learned binary masks, and an
auxiliary teacher-student module distills frozen stereo features into the
monocular encoder. Everything runs at desk scale on CPU; the full-size
geometry is a config flag away.
"""

from seldepth.config import CameraRig, LossWeights, TrainConfig, load_config, save_config, seed_everything

__all__ = [
    "CameraRig",
    "LossWeights",
    "TrainConfig",
    "load_config",
    "save_config",
    "seed_everything",
]

__version__ = "0.1.0"
