import random
from dataclasses import replace

import numpy as np
import pytest
import torch

from seldepth.config import (
    CameraRig,
    ConfigError,
    FeaturePyramid,
    LossWeights,
    SelectionMask,
    TrainConfig,
    config_from_text,
    config_text,
    derive_rng,
    derive_seed,
    load_config,
    save_config,
    seed_everything,
)


def test_defaults_follow_training_recipe():
    cfg = TrainConfig()
    assert cfg.alpha == 0.85
    assert cfg.lr == 1e-4
    assert cfg.epochs == 50
    assert cfg.lr_halve_epochs == [20, 35, 45]
    assert cfg.batch_size == 8
    assert (cfg.image_height, cfg.image_width) == (256, 512)
    assert cfg.channel_base == 32
    assert cfg.lambda_mask == 1.0
    assert cfg.lambda_ts == 1e-4
    assert cfg.lambda_cd == 1.0
    assert cfg.lambda_sd == 1e5
    assert cfg.distill_mode == "selective"
    assert cfg.ts_enabled
    cfg.validate()


def test_save_load_round_trip(tmp_path):
    cfg = TrainConfig(lr=3e-4, epochs=7, lr_halve_epochs=[2, 5], batch_size=2,
                      image_height=64, image_width=128, channel_base=8, seed=9,
                      dataset_root="data/x", proxy_mode="synthetic",
                      distill_mode="direct", ts_enabled=False, lambda_ts=0.0,
                      direct_loss="berhu", crop_bottom=0.25)
    path = tmp_path / "cfg.txt"
    save_config(cfg, path)
    assert load_config(path) == cfg
    assert config_from_text(config_text(cfg)) == cfg


def test_load_errors_name_key_and_line(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("lr = 1e-4\nbogus = 3\n")
    with pytest.raises(ConfigError, match="bad.txt:2: unknown key 'bogus'"):
        load_config(path)
    path.write_text("epochs = soon\n")
    with pytest.raises(ConfigError, match="malformed value for key 'epochs'"):
        load_config(path)
    path.write_text("lr = 1e-4\nlr = 2e-4\n")
    with pytest.raises(ConfigError, match="duplicate key 'lr'"):
        load_config(path)
    path.write_text("lr 1e-4\n")
    with pytest.raises(ConfigError, match="expected 'key = value'"):
        load_config(path)
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.txt")


def test_comments_and_blank_lines_ignored(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("# recipe\n\nlr = 2e-4  # fast\n")
    assert load_config(path).lr == 2e-4


@pytest.mark.parametrize("key,value,hint", [
    ("alpha", 1.5, "alpha"),
    ("epochs", 0, "epochs"),
    ("batch_size", 0, "batch_size"),
    ("image_height", 60, "image_height"),
    ("crop_bottom", 1.0, "crop_bottom"),
    ("proxy_mode", "guess", "proxy_mode"),
    ("distill_mode", "both", "distill_mode"),
    ("direct_loss", "l3", "direct_loss"),
    ("grad_clip", -1.0, "grad_clip"),
])
def test_validate_names_offending_key(key, value, hint):
    cfg = replace(TrainConfig(), **{key: value})
    with pytest.raises(ConfigError, match=f"key '{hint}'"):
        cfg.validate()


def test_lambda_ts_and_ts_enabled_coupling(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("lambda_ts = 0\n")
    cfg = load_config(path)
    assert not cfg.ts_enabled and not cfg.ts_active
    path.write_text("ts_enabled = false\n")
    cfg = load_config(path)
    assert cfg.lambda_ts == 0.0 and not cfg.ts_active
    assert TrainConfig().ts_active
    assert TrainConfig(ts_enabled=False).weights.lambda_ts == 0.0


def test_derived_streams_are_stable_and_independent():
    assert derive_seed(0, "shuffle", 3) == derive_seed(0, "shuffle", 3)
    assert derive_seed(0, "shuffle", 3) != derive_seed(0, "shuffle", 4)
    assert derive_seed(0, "shuffle", 3) != derive_seed(0, "augment", 3)
    assert derive_seed(0, "shuffle", 3) != derive_seed(1, "shuffle", 3)
    a = derive_rng(5, "x").random(4)
    b = derive_rng(5, "x").random(4)
    assert np.array_equal(a, b)


def test_seed_everything_reaches_all_generators():
    seed_everything(123)
    vals = (random.random(), np.random.rand(), float(torch.rand(())))
    seed_everything(123)
    assert vals == (random.random(), np.random.rand(), float(torch.rand(())))


def test_selection_mask_threshold_and_detach():
    logits = torch.tensor([[[[-2.0, 0.0, 2.0]]]], requires_grad=True)
    m = SelectionMask(logits, role="rc")
    assert torch.equal(m.hard, torch.tensor([[[[0.0, 1.0, 1.0]]]]))  # ties go on
    assert not m.hard.requires_grad
    assert m.soft.requires_grad
    assert torch.allclose(m.soft, torch.sigmoid(logits))
    with pytest.raises(ValueError, match="role"):
        SelectionMask(logits, role="rm")
    with pytest.raises(ValueError, match="B, 1, H, W"):
        SelectionMask(torch.zeros(1, 2, 4, 4))


def test_feature_pyramid_contract():
    levels = [torch.zeros(1, 4, 16, 16), torch.zeros(1, 8, 8, 8)]
    p = FeaturePyramid(levels=levels, origin="teacher")
    assert p.shapes() == [(4, 16, 16), (8, 8, 8)]
    p.check_contract()
    bad = FeaturePyramid(levels=[torch.zeros(1, 4, 16, 16), torch.zeros(1, 8, 9, 8)], origin="teacher")
    with pytest.raises(ValueError, match="pyramid contract violated"):
        bad.check_contract()
    with pytest.raises(ValueError, match="origin"):
        FeaturePyramid(levels=levels, origin="oracle")


def test_camera_rig_and_weights_validate():
    with pytest.raises(ConfigError):
        CameraRig(focal_length_px=0.0)
    with pytest.raises(ConfigError):
        LossWeights(alpha=1.2)
    with pytest.raises(ConfigError):
        LossWeights(lambda_sd=-1.0)
