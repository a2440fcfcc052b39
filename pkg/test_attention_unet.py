import math

import joblib
import numpy as np
import pytest
import torch

from conftest import make_disc_pair, small_train_config
from src.components.data_ingestion import DatasetSplit
from src.components.data_transformation import AugmentConfig
from src.components.model_trainer import pretrain_segmenter
from src.exception import CheckpointError, ParameterError, ShapeError, TrainingDivergenceError
from src.model_training.attention_unet import (
    AttentionGateParams,
    AttentionUNet,
    UNetConfig,
    attention_gate,
    attention_maps,
    forward,
    load_segmenter,
    predict_mask,
    save_segmenter,
)
from src.model_training.losses import SegLossWeights, TverskyParams, total_seg_loss
from src.model_training.metrics import evaluate_dataset
from src.utils import module_to_arrays, numerical_gradient, parameter_checksum, relative_error, set_seed


def random_gate(f_l, f_g, f_int, gen, dtype=torch.float32):
    return AttentionGateParams(
        W_x=torch.randn(f_int, f_l, generator=gen, dtype=dtype),
        W_g=torch.randn(f_int, f_g, generator=gen, dtype=dtype),
        psi=torch.randn(f_int, generator=gen, dtype=dtype),
        b_psi=torch.randn((), generator=gen, dtype=dtype),
    )


# ---------------- attention_gate ----------------
def test_zero_psi_gives_half_attention():
    gen = torch.Generator().manual_seed(0)
    params = random_gate(3, 5, 2, gen)
    params.psi = torch.zeros(2)
    params.b_psi = torch.zeros(())
    x = torch.randn(2, 3, 8, 8, generator=gen)
    g = torch.randn(2, 5, 4, 4, generator=gen)
    x_hat, amap = attention_gate(x, g, params)
    assert torch.equal(amap.alpha, torch.full_like(amap.alpha, 0.5))
    assert torch.equal(x_hat, 0.5 * x)


def test_scalar_gate_matches_hand_computation():
    params = AttentionGateParams(W_x=torch.tensor([[0.5]]), W_g=torch.tensor([[1.0]]),
                                 psi=torch.tensor([1.0]), b_psi=torch.tensor(0.0))
    x = torch.full((1, 1, 1, 1), 4.0)
    g = torch.full((1, 1, 1, 1), 1.0)
    x_hat, amap = attention_gate(x, g, params)
    sigma3 = 1.0 / (1.0 + math.exp(-3.0))
    assert float(amap.alpha) == pytest.approx(sigma3, abs=1e-6)
    assert float(x_hat) == pytest.approx(4.0 * sigma3, abs=1e-6)
    assert float(x_hat) == pytest.approx(3.81030, abs=1e-5)


def test_attention_coefficients_stay_in_unit_interval():
    gen = torch.Generator().manual_seed(1)
    for _ in range(100):
        params = random_gate(4, 6, 3, gen)
        params.psi = params.psi * 10
        x = torch.randn(1, 4, 6, 6, generator=gen) * 5
        g = torch.randn(1, 6, 3, 3, generator=gen) * 5
        x_hat, amap = attention_gate(x, g, params)
        assert amap.alpha.min() >= 0.0 and amap.alpha.max() <= 1.0
        assert torch.equal(x_hat, amap.alpha * x)
        assert amap.resolution == (6, 6)


def test_gate_shape_mismatch_names_both_shapes():
    params = random_gate(4, 6, 3, torch.Generator().manual_seed(2))
    x = torch.randn(1, 4, 6, 6)
    g = torch.randn(1, 6, 4, 4)
    with pytest.raises(ShapeError, match=r"\(1, 6, 4, 4\).*\(1, 4, 6, 6\)"):
        attention_gate(x, g, params)
    with pytest.raises(ShapeError):
        attention_gate(torch.randn(1, 5, 6, 6), torch.randn(1, 6, 3, 3), params)


def test_gate_gradients_match_finite_differences():
    gen = torch.Generator().manual_seed(3)
    params = random_gate(2, 2, 2, gen, dtype=torch.float64)
    tensors = [params.W_x, params.W_g, params.psi, params.b_psi]
    assert sum(t.numel() for t in tensors) <= 64
    for t in tensors:
        t.requires_grad_(True)
    x = torch.randn(1, 2, 3, 3, generator=gen, dtype=torch.float64)
    g = torch.randn(1, 2, 3, 3, generator=gen, dtype=torch.float64)
    target = torch.tensor([[[[1, 0, 1], [0, 1, 0], [1, 1, 0]]]], dtype=torch.float64)

    def loss():
        x_hat, _ = attention_gate(x, g, params)
        pred = torch.sigmoid(x_hat.sum(dim=1, keepdim=True))
        return total_seg_loss(pred, target, TverskyParams(), SegLossWeights()).total

    loss().backward()
    for t in tensors:
        numeric = numerical_gradient(loss, t, step=1e-4)
        assert relative_error(t.grad, numeric) < 1e-3


# ---------------- network ----------------
def test_forward_shapes_for_depth_four():
    model = AttentionUNet(UNetConfig(depth=4, base_channels=4, input_size=(256, 256))).eval()
    logits, maps = forward(torch.rand(1, 256, 256), model)
    assert logits.shape == (1, 1, 256, 256)
    assert [m.resolution for m in maps] == [(256, 256), (128, 128), (64, 64)]
    assert [m.gate_index for m in maps] == [0, 1, 2]


def test_forward_rejects_wrong_size(unet_cfg):
    model = AttentionUNet(unet_cfg)
    with pytest.raises(ShapeError):
        forward(torch.rand(1, 1, 32, 32), model)


def test_inference_is_deterministic_and_finite(unet_cfg):
    model = AttentionUNet(unet_cfg).eval()
    image = torch.rand(1, 1, 64, 64)
    with torch.no_grad():
        a, _ = model(image)
        b, _ = model(image)
        zero, _ = model(torch.zeros(1, 1, 64, 64))
    assert torch.equal(a, b)
    assert torch.isfinite(zero).all()


def test_identity_gates_reduce_to_plain_unet(unet_cfg):
    model = AttentionUNet(unet_cfg).eval()
    image = torch.rand(2, 1, 64, 64)
    with torch.no_grad():
        gated_off, maps = model(image, identity_gates=True)
        feats = model.encode(image)
        d = feats[-1]
        for level in reversed(range(unet_cfg.depth - 1)):
            d = model.decoders[level](torch.cat([feats[level], model.ups[level](d)], dim=1))
        reference = model.head(d)
    assert torch.equal(gated_off, reference)
    assert all(torch.equal(m.alpha, torch.ones_like(m.alpha)) for m in maps)


def test_attention_maps_helper_keeps_training_mode(unet_cfg):
    model = AttentionUNet(unet_cfg).train()
    maps = attention_maps(torch.rand(64, 64), model)
    assert len(maps) == unet_cfg.depth - 1
    assert model.training


class FixedLogits(AttentionUNet):
    def __init__(self, logits):
        super().__init__(UNetConfig(depth=2, base_channels=1, input_size=tuple(logits.shape[-2:])))
        self.logits = logits

    def forward(self, image, identity_gates=False):
        return self.logits.expand(image.shape[0], 1, *self.logits.shape[-2:]), []


def test_predict_mask_follows_logit_sign():
    pattern = torch.tensor([[10.0, -10.0, 10.0, -10.0]] * 4).reshape(1, 1, 4, 4)
    model = FixedLogits(pattern)
    mask = predict_mask(torch.zeros(1, 1, 4, 4), model, threshold=0.5)
    assert mask.dtype == torch.uint8
    assert torch.equal(mask, (pattern > 0).to(torch.uint8))


def test_threshold_extremes(unet_cfg):
    model = AttentionUNet(unet_cfg)
    image = torch.rand(64, 64)
    assert int(predict_mask(image, model, 0.0).min()) == 1
    assert int(predict_mask(image, model, 1.0).max()) == 0
    with pytest.raises(ParameterError):
        predict_mask(image, model, 1.5)


# ---------------- pretraining ----------------
def test_pretraining_overfits_four_discs():
    pairs = [make_disc_pair(64, 20 + 8 * i, 40 - 6 * i, 10 + i, seed=i, id=f"d{i}") for i in range(4)]
    cfg = small_train_config(epochs_pretrain=200, batch_size=4, lr_seg=1e-3, seed=0)
    split = DatasetSplit(train=pairs, val=pairs, seed=0, ratio=0.5)
    model, history = pretrain_segmenter(split, cfg)
    assert len(history) == 200
    assert evaluate_dataset(model, pairs).aggregate["dice"] >= 0.95


def test_zero_epochs_returns_initial_model(pairs8):
    cfg = small_train_config(epochs_pretrain=0)
    model, history = pretrain_segmenter(DatasetSplit(pairs8[:6], pairs8[6:], 0, 0.75), cfg)
    set_seed(cfg.seed)
    fresh = AttentionUNet(cfg.unet)
    assert history == []
    assert parameter_checksum(model) == parameter_checksum(fresh)


def test_pretraining_history_is_reproducible(pairs8, tmp_path):
    cfg = small_train_config(epochs_pretrain=2, augment=AugmentConfig())
    split = DatasetSplit(pairs8[:6], pairs8[6:], 0, 0.75)
    _, first = pretrain_segmenter(split, cfg, history_path=tmp_path / "h.jsonl")
    _, second = pretrain_segmenter(split, cfg)
    assert first == second
    assert {"ce", "focal_tversky", "total", "val_dice", "val_f1"} <= set(first[0])
    assert (tmp_path / "h.jsonl").read_text().count("\n") == 2


def test_dice_ablation_records_dice_term(pairs8):
    cfg = small_train_config(epochs_pretrain=1, seg_loss_mode="dice")
    _, history = pretrain_segmenter(DatasetSplit(pairs8[:6], pairs8[6:], 0, 0.75), cfg)
    assert "dice" in history[0] and "ce" not in history[0]


def test_epoch_callback_sees_every_epoch(pairs8):
    seen = []
    cfg = small_train_config(epochs_pretrain=3)
    pretrain_segmenter(DatasetSplit(pairs8[:6], pairs8[6:], 0, 0.75), cfg,
                       on_epoch_end=lambda epoch, model: seen.append(epoch))
    assert seen == [1, 2, 3]


def test_empty_train_set_is_rejected(pairs8):
    with pytest.raises(ParameterError):
        pretrain_segmenter(DatasetSplit([], pairs8, 0, 0.5), small_train_config())


def test_nan_loss_names_the_epoch(disc_pair):
    broken = make_disc_pair(id="nan")
    broken.image[0, 0] = np.nan
    cfg = small_train_config(epochs_pretrain=1)
    with pytest.raises(TrainingDivergenceError, match="epoch 1"):
        pretrain_segmenter(DatasetSplit([broken], [disc_pair], 0, 0.5), cfg)


# ---------------- checkpoints ----------------
def test_checkpoint_round_trip_is_byte_identical(unet_cfg, tmp_path):
    model = AttentionUNet(unet_cfg)
    first = save_segmenter(model, tmp_path / "a.ckpt")
    second = save_segmenter(load_segmenter(first), tmp_path / "b.ckpt")
    assert first.read_bytes() == second.read_bytes()


def test_scalar_buffers_keep_their_shape(unet_cfg, tmp_path):
    model = AttentionUNet(unet_cfg)
    arrays = module_to_arrays(model)
    scalars = [name for name, t in model.state_dict().items() if t.dim() == 0]
    assert any(name.endswith("num_batches_tracked") for name in scalars)
    assert any(name.endswith("b_psi") for name in scalars)
    assert all(arrays[name].shape == () for name in scalars)
    loaded = load_segmenter(save_segmenter(model, tmp_path / "a.ckpt"))
    assert parameter_checksum(loaded) == parameter_checksum(model)


def test_loading_under_mismatched_config_names_the_parameter(unet_cfg, tmp_path):
    path = save_segmenter(AttentionUNet(unet_cfg), tmp_path / "a.ckpt")
    wider = UNetConfig(depth=3, base_channels=16, input_size=(64, 64))
    with pytest.raises(ShapeError, match="encoders.0"):
        load_segmenter(path, wider)


def test_corrupt_and_foreign_checkpoints_fail_cleanly(unet_cfg, tmp_path):
    corrupt = tmp_path / "corrupt.ckpt"
    corrupt.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_segmenter(corrupt)
    old = tmp_path / "old.ckpt"
    joblib.dump({"format": "sagegan-checkpoint", "version": 99, "kind": "segmenter"}, old)
    with pytest.raises(CheckpointError, match="version"):
        load_segmenter(old)
    with pytest.raises(CheckpointError, match="not found"):
        load_segmenter(tmp_path / "missing.ckpt")
