"""Corruption benchmark: metrics, kernels, dataset assembly, storage."""
import numpy as np
import pytest

from gara import bench as cb
from gara.errors import ConfigError, DataError, ShapeError
from gara.rng import SeededRng
from oracles import ref_dice, ref_iou


# ---------------------------------------------------------------------------
# overlap metrics


def test_iou_dice_hand_fixture():
    pred = np.zeros((4, 4), dtype=bool)
    pred[0:2, 0:2] = True  # 4 pixels
    gt = np.zeros((4, 4), dtype=bool)
    gt[1:3, 1:3] = True
    gt[3, 3] = True
    gt[0, 0] = True  # 6 pixels, overlap {(0,0), (1,1)}
    assert cb.iou(pred, gt) == 2 / 8
    assert cb.dice(pred, gt) == 2 * 2 / (4 + 6)


def test_iou_dice_edge_cases():
    empty = np.zeros((3, 3), dtype=bool)
    full = np.ones((3, 3), dtype=bool)
    assert cb.iou(empty, empty) == 1.0
    assert cb.dice(empty, empty) == 1.0
    assert cb.iou(empty, full) == 0.0
    assert cb.dice(empty, full) == 0.0
    assert cb.iou(full, full) == 1.0
    assert cb.dice(full, full) == 1.0


def test_iou_dice_match_oracle_and_identity():
    rng = np.random.default_rng(0)
    for _ in range(200):
        pred = rng.uniform(size=(8, 8)) > 0.5
        gt = rng.uniform(size=(8, 8)) > 0.5
        i = cb.iou(pred, gt)
        d = cb.dice(pred, gt)
        assert i == ref_iou(pred, gt)
        assert d == ref_dice(pred, gt)
        assert d >= i
        # dice is a fixed function of iou
        assert abs(d - 2 * i / (1 + i)) < 1e-12


def test_metric_shape_mismatch():
    with pytest.raises(ShapeError):
        cb.iou(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(ShapeError):
        cb.dice(np.zeros((2, 2)), np.zeros((3, 3)))


# ---------------------------------------------------------------------------
# clean image synthesis


def test_make_clean_sample_basic():
    image, mask = cb.make_clean_sample(SeededRng(7))
    assert image.shape == (32, 32)
    assert mask.shape == (32, 32)
    assert mask.dtype == bool
    assert image.min() >= 0.0 and image.max() <= 1.0
    # the shape is present but does not swallow the frame
    assert 0 < mask.sum() < mask.size


def test_make_clean_sample_deterministic():
    a_img, a_mask = cb.make_clean_sample(SeededRng(11))
    b_img, b_mask = cb.make_clean_sample(SeededRng(11))
    np.testing.assert_array_equal(a_img, b_img)
    np.testing.assert_array_equal(a_mask, b_mask)
    c_img, _ = cb.make_clean_sample(SeededRng(12))
    assert np.any(c_img != a_img)


def test_generate_clean_pairs():
    pairs = cb.generate_clean_pairs(5, SeededRng(13))
    assert len(pairs) == 5
    again = cb.generate_clean_pairs(5, SeededRng(13))
    for (img, mask), (img2, mask2) in zip(pairs, again):
        np.testing.assert_array_equal(img, img2)
        np.testing.assert_array_equal(mask, mask2)
    # pairs within a batch differ
    assert np.any(pairs[0][0] != pairs[1][0])


# ---------------------------------------------------------------------------
# corruption kernels


def test_box_blur_constant_fixed_point():
    flat = np.full((8, 8), 0.5)
    for kernel in (1, 3, 5):
        out = cb.box_blur(flat, kernel)
        # k*k copies of 0.5 sum and divide exactly in binary
        np.testing.assert_array_equal(out, flat)


def test_box_blur_kernel_one_is_copy():
    image = np.random.default_rng(1).uniform(size=(8, 8))
    out = cb.box_blur(image, 1)
    np.testing.assert_array_equal(out, image)
    assert out is not image


def test_box_blur_matches_direct_mean():
    image = np.random.default_rng(2).uniform(size=(6, 6))
    out = cb.box_blur(image, 3)
    padded = np.pad(image, 1, mode="edge")
    for y in range(6):
        for x in range(6):
            assert out[y, x] == pytest.approx(padded[y : y + 3, x : x + 3].mean(), abs=1e-15)


def test_box_blur_validation():
    with pytest.raises(ConfigError):
        cb.box_blur(np.zeros((4, 4)), 2)
    with pytest.raises(ConfigError):
        cb.box_blur(np.zeros((4, 4)), 0)


def test_brightness_closed_form():
    image = np.full((4, 4), 0.5)
    out = cb.shift_brightness(image, 0.2)
    np.testing.assert_array_equal(out, np.full((4, 4), 0.5 + 0.2))
    clipped = cb.shift_brightness(np.full((4, 4), 0.95), 0.2)
    np.testing.assert_array_equal(clipped, np.ones((4, 4)))


def test_contrast_closed_form():
    image = np.random.default_rng(3).uniform(size=(4, 4))
    np.testing.assert_array_equal(cb.scale_contrast(image, 1.0), image)
    out = cb.scale_contrast(image, 0.4)
    np.testing.assert_allclose(out, 0.5 + 0.4 * (image - 0.5), atol=1e-15)
    # mid-gray is the fixed point
    mid = np.full((4, 4), 0.5)
    np.testing.assert_array_equal(cb.scale_contrast(mid, 0.1), mid)


def test_gaussian_noise():
    image = np.random.default_rng(4).uniform(size=(8, 8))
    out = cb.add_gaussian_noise(image, 0.0, SeededRng(5))
    np.testing.assert_array_equal(out, image)
    assert out is not image
    a = cb.add_gaussian_noise(image, 0.1, SeededRng(6))
    b = cb.add_gaussian_noise(image, 0.1, SeededRng(6))
    np.testing.assert_array_equal(a, b)
    c = cb.add_gaussian_noise(image, 0.1, SeededRng(7))
    assert np.any(c != a)
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_salt_pepper():
    image = np.full((32, 32), 0.5)
    out = cb.salt_pepper(image, 0.0, SeededRng(8))
    np.testing.assert_array_equal(out, image)
    frac = 0.02
    out = cb.salt_pepper(image, frac, SeededRng(9))
    flipped = out != 0.5
    assert flipped.sum() == int(round(frac * image.size))
    assert np.all(np.isin(out[flipped], (0.0, 1.0)))
    again = cb.salt_pepper(image, frac, SeededRng(9))
    np.testing.assert_array_equal(out, again)
    with pytest.raises(ConfigError):
        cb.salt_pepper(image, 1.5, SeededRng(10))


def test_corruption_input_validation():
    with pytest.raises(DataError):
        cb.shift_brightness(np.full((4, 4), 1.5), 0.1)
    with pytest.raises(ShapeError):
        cb.shift_brightness(np.zeros(16), 0.1)


def test_corruption_spec_validation():
    with pytest.raises(ConfigError):
        cb.CorruptionSpec("vignette", 1, 0)
    with pytest.raises(ConfigError):
        cb.CorruptionSpec("box_blur", 0, 0)
    with pytest.raises(ConfigError):
        cb.CorruptionSpec("box_blur", 6, 0)


def test_apply_corruption_deterministic():
    image, _ = cb.make_clean_sample(SeededRng(14))
    for kind in cb.KINDS:
        spec = cb.CorruptionSpec(kind, 3, seed=99)
        a = cb.apply_corruption(spec, image)
        b = cb.apply_corruption(spec, image)
        np.testing.assert_array_equal(a, b)
        assert a.min() >= 0.0 and a.max() <= 1.0


def test_corruption_severity_monotone():
    # mean RMS distance from clean grows with severity, for every kind
    images = [cb.make_clean_sample(SeededRng(100 + i))[0] for i in range(10)]
    for kind in cb.KINDS:
        distances = []
        for severity in range(1, 6):
            rms = [
                np.sqrt(np.mean((cb.apply_corruption(cb.CorruptionSpec(kind, severity, i), img) - img) ** 2))
                for i, img in enumerate(images)
            ]
            distances.append(np.mean(rms))
        assert distances[0] > 0.0, kind  # severity 1 already changes the image
        for lo, hi in zip(distances, distances[1:]):
            assert hi > lo, f"{kind}: {distances}"


# ---------------------------------------------------------------------------
# dataset assembly


def test_generate_bench_grid():
    samples = cb.generate_bench(("box_blur", "contrast"), (1, 2), 3, SeededRng(15), start_id=10)
    assert len(samples) == 2 * 2 * 3
    assert [s.image_id for s in samples] == list(range(10, 22))
    assert {s.spec.kind for s in samples} == {"box_blur", "contrast"}
    assert {s.spec.severity for s in samples} == {1, 2}
    again = cb.generate_bench(("box_blur", "contrast"), (1, 2), 3, SeededRng(15), start_id=10)
    for s, t in zip(samples, again):
        assert (s.image_id, s.spec) == (t.image_id, t.spec)
        np.testing.assert_array_equal(s.clean, t.clean)
        np.testing.assert_array_equal(s.corrupted, t.corrupted)
        np.testing.assert_array_equal(s.mask, t.mask)


def test_generate_bench_validation():
    with pytest.raises(ConfigError):
        cb.generate_bench(("fog",), (1,), 1, SeededRng(0))
    with pytest.raises(ConfigError):
        cb.generate_bench(("box_blur",), (1,), 0, SeededRng(0))


def test_train_test_split_kinds():
    train = cb.train_bench(SeededRng(16), per_cell=1)
    assert {s.spec.kind for s in train} == set(cb.seen_kinds())
    assert cb.DEFAULT_HOLDOUT not in {s.spec.kind for s in train}
    assert {s.spec.severity for s in train} == set(cb.TRAIN_SEVERITIES)
    test = cb.test_bench(SeededRng(16), per_cell=1)
    assert {s.spec.kind for s in test} == set(cb.KINDS)  # zero-shot kind included
    assert {s.spec.severity for s in test} == set(cb.TEST_SEVERITIES)
    with pytest.raises(ConfigError):
        cb.seen_kinds("fog")


def test_train_split_honours_holdout_choice():
    train = cb.train_bench(SeededRng(17), per_cell=1, holdout="box_blur")
    kinds = {s.spec.kind for s in train}
    assert "box_blur" not in kinds
    assert "salt_pepper" in kinds


# ---------------------------------------------------------------------------
# storage


def test_manifest_round_trip(tmp_path):
    samples = cb.generate_bench(("brightness",), (1, 2), 2, SeededRng(18))
    path = tmp_path / "bench.jsonl"
    cb.write_manifest(path, samples)
    records = cb.read_manifest(path)
    assert len(records) == len(samples)
    for rec, s in zip(records, samples):
        assert rec == {"id": s.image_id, "kind": s.spec.kind,
                       "severity": s.spec.severity, "seed": s.spec.seed}


def test_bench_round_trip_byte_identical(tmp_path):
    samples = cb.generate_bench(("gaussian_noise", "salt_pepper"), (1, 4), 2, SeededRng(19))
    path = tmp_path / "bench.bin"
    cb.save_bench(path, samples)
    loaded = cb.load_bench(path)
    assert len(loaded) == len(samples)
    for s, t in zip(samples, loaded):
        assert (s.image_id, s.spec) == (t.image_id, t.spec)
        assert s.clean.tobytes() == t.clean.tobytes()
        assert s.corrupted.tobytes() == t.corrupted.tobytes()
        np.testing.assert_array_equal(s.mask, t.mask)
        assert t.mask.dtype == bool
    # save -> load -> save reproduces the file exactly
    path2 = tmp_path / "bench2.bin"
    cb.save_bench(path2, loaded)
    assert path.read_bytes() == path2.read_bytes()


def test_bench_rejects_non_binary_mask(tmp_path):
    samples = cb.generate_bench(("brightness",), (1,), 1, SeededRng(20))
    samples[0].mask = np.full((32, 32), 0.5)
    path = tmp_path / "bad.bin"
    cb.save_bench(path, samples)
    with pytest.raises(DataError):
        cb.load_bench(path)


def test_clean_pairs_round_trip(tmp_path):
    pairs = cb.generate_clean_pairs(4, SeededRng(21))
    path = tmp_path / "clean.bin"
    cb.save_clean_pairs(path, pairs)
    loaded = cb.load_clean_pairs(path)
    assert len(loaded) == 4
    for (img, mask), (img2, mask2) in zip(pairs, loaded):
        assert img.tobytes() == img2.tobytes()
        np.testing.assert_array_equal(mask, mask2)
        assert mask2.dtype == bool
    path2 = tmp_path / "clean2.bin"
    cb.save_clean_pairs(path2, loaded)
    assert path.read_bytes() == path2.read_bytes()


def test_clean_pairs_empty_round_trip(tmp_path):
    path = tmp_path / "empty.bin"
    cb.save_clean_pairs(path, [])
    assert cb.load_clean_pairs(path) == []
