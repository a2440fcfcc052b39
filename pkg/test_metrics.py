import json

import numpy as np
import pytest

from src.exception import DomainError, ParameterError, ShapeError
from src.model_training.attention_unet import AttentionUNet, UNetConfig
from src.model_training.metrics import (
    COMPARISON_TABLE,
    ConfusionCounts,
    SegReport,
    confusion_counts,
    dice_from_counts,
    dice_score,
    evaluate_dataset,
    f1_score,
    precision_recall,
    relative_improvement,
    score_masks,
)


def mask_with_foreground(n_fg, shape=(16, 16)):
    m = np.zeros(shape[0] * shape[1], np.uint8)
    m[:n_fg] = 1
    return m.reshape(shape)


# ---------------- confusion counts ----------------
def test_identical_masks_count_only_true_cells():
    gt = mask_with_foreground(100)
    c = confusion_counts(gt, gt)
    assert c == ConfusionCounts(tp=100, fp=0, fn=0, tn=156)
    assert c.total == 256


def test_complement_has_no_agreement():
    gt = mask_with_foreground(100)
    c = confusion_counts(1 - gt, gt)
    assert c.tp == 0 and c.tn == 0
    assert c.fp == 156 and c.fn == 100
    assert dice_from_counts(c) == 0.0


def test_counts_reject_non_binary_and_mismatched_masks():
    with pytest.raises(DomainError):
        confusion_counts(np.array([[0, 2]]), np.array([[0, 1]]))
    with pytest.raises(ShapeError):
        confusion_counts(np.zeros((2, 2)), np.zeros((2, 3)))


# ---------------- dice / f1 ----------------
def test_hand_oracle_counts():
    c = ConfusionCounts(tp=8, fp=2, fn=2, tn=88)
    assert dice_from_counts(c) == pytest.approx(0.8)
    precision, recall = precision_recall(c)
    assert precision == pytest.approx(0.8) and recall == pytest.approx(0.8)
    assert f1_score(c) == pytest.approx(0.8)


def test_empty_masks_agree_on_absence():
    empty = np.zeros((8, 8), np.uint8)
    c = confusion_counts(empty, empty)
    assert precision_recall(c) == (1.0, 1.0)
    assert dice_from_counts(c) == 1.0
    assert f1_score(c) == 1.0


def test_dice_equals_f1_on_random_masks():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        pred = (rng.random((64, 64)) < rng.random()).astype(np.uint8)
        gt = (rng.random((64, 64)) < rng.random()).astype(np.uint8)
        c = confusion_counts(pred, gt)
        assert abs(dice_from_counts(c) - f1_score(c)) < 1e-12
        precision, recall = precision_recall(c)
        if precision + recall > 0:
            assert abs(f1_score(c) - 2 * precision * recall / (precision + recall)) < 1e-12


def test_dice_is_symmetric():
    rng = np.random.default_rng(1)
    a = (rng.random((32, 32)) > 0.4).astype(np.uint8)
    b = (rng.random((32, 32)) > 0.6).astype(np.uint8)
    assert dice_score(a, b) == dice_score(b, a)


def test_dice_grows_as_false_positives_are_removed():
    gt = mask_with_foreground(64)
    pred = mask_with_foreground(128)
    before = dice_score(pred, gt)
    pred[4, :] = 0
    assert dice_score(pred, gt) > before


def test_beta_weights_recall():
    c = ConfusionCounts(tp=6, fp=0, fn=4, tn=90)
    assert f1_score(c, beta=2.0) < f1_score(c, beta=1.0) < f1_score(c, beta=0.5)
    with pytest.raises(ParameterError):
        f1_score(c, beta=0.0)


# ---------------- relative improvement ----------------
def test_relative_improvement_over_attention_unet():
    dice_new, f1_new = COMPARISON_TABLE["SAGE-GAN"]
    dice_old, f1_old = COMPARISON_TABLE["Attention U-Net"]
    assert relative_improvement(dice_new, dice_old) == pytest.approx(7.25, abs=0.01)
    assert relative_improvement(f1_new, f1_old) == pytest.approx(9.25, abs=0.01)
    with pytest.raises(ParameterError):
        relative_improvement(0.5, 0.0)


# ---------------- reports ----------------
def test_score_masks_aggregate_is_row_mean():
    gt = mask_with_foreground(50)
    preds = [gt, 1 - gt, mask_with_foreground(25)]
    report = score_masks(["a", "b", "c"], preds, [gt] * 3)
    frame = report.to_frame()
    assert list(frame["id"]) == ["a", "b", "c"]
    assert report.aggregate["dice"] == pytest.approx(frame["dice"].mean())
    assert report.aggregate["f1"] == pytest.approx(frame["f1"].mean())
    assert report.per_image[0]["dice"] == 1.0
    assert report.config["aggregation"] == "image-mean"


def test_report_survives_json():
    gt = mask_with_foreground(10)
    report = score_masks(["x"], [gt], [gt], config={"threshold": 0.5})
    again = SegReport.from_dict(json.loads(json.dumps(report.to_dict())))
    assert again == report


def test_score_masks_rejects_empty_input():
    with pytest.raises(ParameterError):
        score_masks([], [], [])


def test_evaluate_dataset_scores_in_order(pairs8):
    model = AttentionUNet(UNetConfig(depth=3, base_channels=8, input_size=(64, 64)))
    report = evaluate_dataset(model, pairs8, batch_size=3)
    assert [row["id"] for row in report.per_image] == [p.id for p in pairs8]
    assert report.config["n_images"] == 8
    assert 0.0 <= report.aggregate["dice"] <= 1.0
    with pytest.raises(ParameterError):
        evaluate_dataset(model, [])
