import cv2
import numpy as np
import pytest

from conftest import make_disc_pair, toy_pairs, write_dataset
from src.components.data_ingestion import (
    DataIngestion,
    DataIngestionConfig,
    SamplePair,
    apply_split_manifest,
    binarize_mask,
    load_dataset,
    read_split_manifest,
    split_dataset,
    write_split_manifest,
)
from src.components.data_transformation import AugmentConfig, augment, hflip, preprocess, random_crop, vflip
from src.exception import IngestionError, ParameterError


def dummy_pairs(n):
    return [SamplePair(image=np.zeros((4, 4), np.float32), mask=np.zeros((4, 4), np.uint8), id=f"p{i:03d}")
            for i in range(n)]


# ---------------- load_dataset ----------------
def test_load_dataset_reads_sorted_normalized_pairs(dataset_dir):
    pairs = load_dataset(dataset_dir)
    assert len(pairs) == 10
    assert [p.id for p in pairs] == sorted(p.id for p in pairs)
    for p in pairs:
        assert p.image.shape == p.mask.shape
        assert p.image.dtype == np.float32
        assert 0.0 <= p.image.min() and p.image.max() <= 1.0
        assert set(np.unique(p.mask)) <= {0, 1}


def test_parallel_loading_matches_sequential(dataset_dir):
    seq = load_dataset(dataset_dir, n_jobs=1)
    par = load_dataset(dataset_dir, n_jobs=2)
    assert [p.id for p in seq] == [p.id for p in par]
    for a, b in zip(seq, par):
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.mask, b.mask)


def test_empty_dataset_is_an_error(tmp_path):
    (tmp_path / "images").mkdir()
    (tmp_path / "masks").mkdir()
    with pytest.raises(IngestionError, match="empty"):
        load_dataset(tmp_path)


def test_missing_directory_names_the_path(tmp_path):
    with pytest.raises(IngestionError, match="nowhere"):
        load_dataset(tmp_path / "nowhere")


def test_unmatched_stem_is_listed(tmp_path):
    root = write_dataset(tmp_path / "ds", toy_pairs(3))
    (root / "masks" / "toy_001.png").unlink()
    with pytest.raises(IngestionError) as info:
        load_dataset(root)
    message = str(info.value)
    assert "toy_001" in message
    assert "toy_000" not in message and "toy_002" not in message


def test_color_file_is_rejected_by_name(tmp_path):
    root = write_dataset(tmp_path / "ds", toy_pairs(2))
    cv2.imwrite(str(root / "images" / "toy_000.png"), np.zeros((64, 64, 3), np.uint8))
    with pytest.raises(IngestionError, match="toy_000"):
        load_dataset(root)


def test_masks_binarized_at_half_scale():
    mask = np.array([[0.0, 0.49], [0.5, 1.0]])
    np.testing.assert_array_equal(binarize_mask(mask), [[0, 0], [1, 1]])


# ---------------- split_dataset ----------------
def test_split_140_pairs_gives_112_and_28():
    split = split_dataset(dummy_pairs(140), ratio=0.8, seed=3)
    assert len(split.train) == 112
    assert len(split.val) == 28


def test_split_is_a_deterministic_partition():
    pairs = dummy_pairs(10)
    a = split_dataset(pairs, 0.8, seed=11)
    b = split_dataset(pairs, 0.8, seed=11)
    assert [p.id for p in a.train] == [p.id for p in b.train]
    train_ids = {p.id for p in a.train}
    val_ids = {p.id for p in a.val}
    assert not train_ids & val_ids
    assert train_ids | val_ids == {p.id for p in pairs}
    assert len(a.train) == 8


@pytest.mark.parametrize("ratio", [0.0, 1.0, -0.2, 1.5])
def test_split_rejects_bad_ratio(ratio):
    with pytest.raises(ParameterError):
        split_dataset(dummy_pairs(10), ratio=ratio)


def test_split_rejects_an_empty_partition():
    with pytest.raises(ParameterError, match="empty partition"):
        split_dataset(dummy_pairs(2), ratio=0.3)
    with pytest.raises(ParameterError, match="empty partition"):
        split_dataset(dummy_pairs(3), ratio=0.9)


def test_split_uses_the_floor_of_ratio_times_n():
    assert len(split_dataset(dummy_pairs(2), ratio=0.5).train) == 1
    assert len(split_dataset(dummy_pairs(7), ratio=0.8).train) == 5
    # 0.29 * 100 evaluates just below 29
    assert len(split_dataset(dummy_pairs(100), ratio=0.29).train) == 29


def test_manifest_reapplies_the_same_split(tmp_path):
    pairs = dummy_pairs(20)
    split = split_dataset(pairs, 0.8, seed=5)
    path = write_split_manifest(split, tmp_path / "split_manifest.txt")
    manifest = read_split_manifest(path)
    assert manifest["seed"] == 5
    assert manifest["ratio"] == pytest.approx(0.8)
    again = apply_split_manifest(pairs, manifest)
    assert [p.id for p in again.train] == [p.id for p in split.train]
    assert [p.id for p in again.val] == [p.id for p in split.val]


def test_manifest_with_unknown_stems_fails(tmp_path):
    split = split_dataset(dummy_pairs(10), 0.8, seed=1)
    manifest = read_split_manifest(write_split_manifest(split, tmp_path / "m.txt"))
    with pytest.raises(IngestionError):
        apply_split_manifest(dummy_pairs(5), manifest)


def test_data_ingestion_writes_manifest(dataset_dir, tmp_path):
    cfg = DataIngestionConfig(root=dataset_dir, artifacts_dir=tmp_path / "out", ratio=0.8, seed=2)
    split = DataIngestion(cfg).initiate_data_ingestion()
    assert len(split.train) == 8 and len(split.val) == 2
    assert cfg.manifest_path.exists()


# ---------------- preprocess ----------------
def test_preprocess_downsizes_and_keeps_mask_binary():
    pair = make_disc_pair(size=1024, cx=512, cy=512, radius=200)
    out = preprocess(pair, (256, 256))
    assert out.image.shape == (256, 256) and out.mask.shape == (256, 256)
    assert set(np.unique(out.mask)) <= {0, 1}
    assert 0.0 <= out.image.min() and out.image.max() <= 1.0


def test_preprocess_at_target_size_is_identity(disc_pair):
    out = preprocess(disc_pair, disc_pair.image.shape)
    np.testing.assert_array_equal(out.image, disc_pair.image)
    np.testing.assert_array_equal(out.mask, disc_pair.mask)


def test_checkerboard_mask_expands_by_nearest_neighbour():
    mask = np.array([[1, 0], [0, 1]], np.uint8)
    pair = SamplePair(image=mask.astype(np.float32), mask=mask, id="cb")
    out = preprocess(pair, (4, 4))
    expected = np.array([[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1], [0, 0, 1, 1]], np.uint8)
    np.testing.assert_array_equal(out.mask, expected)


def test_preprocess_rejects_non_positive_size(disc_pair):
    with pytest.raises(ParameterError):
        preprocess(disc_pair, (0, 64))


# ---------------- augment ----------------
def test_hflip_is_an_involution(disc_pair):
    twice = hflip(hflip(disc_pair))
    np.testing.assert_array_equal(twice.image, disc_pair.image)
    np.testing.assert_array_equal(twice.mask, disc_pair.mask)


def test_hflip_moves_mask_with_image():
    image = np.arange(16, dtype=np.float32).reshape(4, 4) / 15.0
    mask = (image > 0.5).astype(np.uint8)
    out = hflip(SamplePair(image=image, mask=mask, id="f"))
    np.testing.assert_array_equal(out.image, image[:, ::-1])
    np.testing.assert_array_equal(out.mask, mask[:, ::-1])


def test_disabled_augmentation_is_identity(disc_pair):
    out = augment(disc_pair, AugmentConfig.disabled(), np.random.default_rng(0))
    np.testing.assert_array_equal(out.image, disc_pair.image)
    np.testing.assert_array_equal(out.mask, disc_pair.mask)


def test_geometric_transforms_commute_with_binarization(disc_pair):
    soft = disc_pair.mask.astype(np.float32) * 0.9
    for transform in (np.fliplr, np.flipud):
        np.testing.assert_array_equal(binarize_mask(transform(soft)), transform(binarize_mask(soft)))
    pair = SamplePair(image=disc_pair.image, mask=binarize_mask(soft), id="c")
    crop_a = random_crop(pair, 0.75, np.random.default_rng(4))
    crop_b = random_crop(vflip(vflip(pair)), 0.75, np.random.default_rng(4))
    np.testing.assert_array_equal(crop_a.mask, crop_b.mask)


def test_full_augmentation_keeps_pair_invariants(disc_pair):
    rng = np.random.default_rng(9)
    cfg = AugmentConfig(flip_h=1.0, flip_v=1.0, clahe=True, random_crop=True, crop_fraction=0.8)
    for _ in range(5):
        out = augment(disc_pair, cfg, rng)
        assert out.image.shape == disc_pair.image.shape == out.mask.shape
        assert set(np.unique(out.mask)) <= {0, 1}
        assert 0.0 <= out.image.min() and out.image.max() <= 1.0


def test_augment_config_validates_probabilities():
    with pytest.raises(ParameterError):
        AugmentConfig(flip_h=1.5)
    with pytest.raises(ParameterError):
        AugmentConfig(crop_fraction=0.0)
