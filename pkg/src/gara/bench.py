"""Synthetic corruption benchmark.

Clean images are 32x32 single-channel scenes in [0, 1]: one bright geometric
shape (disc, rectangle, or triangle) on a darker textured background, with
the exact rasterized shape mask as ground truth.  Five corruption kinds at
severities 1..5 degrade the images; training sees severities {1,2,3} of four
kinds, evaluation sees severities {4,5} of all five, so one kind is always
zero-shot.  Generation is a pure function of the seed: regenerating yields
byte-identical samples.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DataError, ShapeError
from .rng import SeededRng

IMAGE_SIZE = 32

KINDS = ("gaussian_noise", "box_blur", "brightness", "contrast", "salt_pepper")
DEFAULT_HOLDOUT = "salt_pepper"
TRAIN_SEVERITIES = (1, 2, 3)
TEST_SEVERITIES = (4, 5)

# severity -> kernel strength maps
NOISE_SIGMA_PER_LEVEL = 0.04
BLUR_KERNEL = {s: 2 * s + 1 for s in range(1, 6)}
BRIGHTNESS_SHIFT_PER_LEVEL = 0.1
CONTRAST_LOSS_PER_LEVEL = 0.15
PEPPER_FRACTION_PER_LEVEL = 0.02


# ---------------------------------------------------------------------------
# metrics


def _as_masks(pred, gt, op: str):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"{op} mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred.astype(bool), gt.astype(bool)


def iou(pred, gt) -> float:
    """Intersection over union; two empty masks count as a perfect 1.0."""
    pred, gt = _as_masks(pred, gt, "iou")
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def dice(pred, gt) -> float:
    """Dice overlap 2|A&B|/(|A|+|B|); two empty masks count as 1.0."""
    pred, gt = _as_masks(pred, gt, "dice")
    total = pred.sum() + gt.sum()
    if total == 0:
        return 1.0
    return float(2.0 * np.logical_and(pred, gt).sum() / total)


# ---------------------------------------------------------------------------
# clean image synthesis


def _smooth_field(rng: SeededRng, size: int, cell: int = 4, amplitude: float = 0.06) -> np.ndarray:
    """Low-frequency texture: coarse gaussian grid upsampled and box-smoothed."""
    coarse = rng.normal(size=(size // cell, size // cell), scale=amplitude)
    field = np.kron(coarse, np.ones((cell, cell)))
    return box_blur(field.clip(-0.5, 0.5) + 0.5, 3) - 0.5


def _pixel_grid(size: int):
    ys, xs = np.mgrid[0:size, 0:size]
    return ys + 0.5, xs + 0.5


def _disc_mask(rng: SeededRng, size: int) -> np.ndarray:
    ys, xs = _pixel_grid(size)
    cy, cx = rng.uniform(2) * (size - 16) + 8
    radius = rng.uniform() * 5.0 + 4.0
    return (ys - cy) ** 2 + (xs - cx) ** 2 <= radius**2


def _rect_mask(rng: SeededRng, size: int) -> np.ndarray:
    ys, xs = _pixel_grid(size)
    cy, cx = rng.uniform(2) * (size - 16) + 8
    hy, hx = rng.uniform(2) * 5.0 + 3.0
    return (np.abs(ys - cy) <= hy) & (np.abs(xs - cx) <= hx)


def _triangle_mask(rng: SeededRng, size: int) -> np.ndarray:
    ys, xs = _pixel_grid(size)
    for attempt in range(100):
        pts = rng.split("verts", attempt).uniform((3, 2)) * (size - 8) + 4
        (ay, ax), (by, bx), (cy, cx) = pts
        area2 = abs((bx - ax) * (cy - ay) - (cx - ax) * (by - ay))
        if area2 < 60.0:  # reject slivers, keeps masks segmentable
            continue
        d1 = (xs - ax) * (by - ay) - (ys - ay) * (bx - ax)
        d2 = (xs - bx) * (cy - by) - (ys - by) * (cx - bx)
        d3 = (xs - cx) * (ay - cy) - (ys - cy) * (ax - cx)
        inside = ((d1 >= 0) & (d2 >= 0) & (d3 >= 0)) | ((d1 <= 0) & (d2 <= 0) & (d3 <= 0))
        return inside
    raise DataError("triangle sampler failed to find a non-degenerate shape")


_SHAPES = (_disc_mask, _rect_mask, _triangle_mask)


def make_clean_sample(rng: SeededRng, size: int = IMAGE_SIZE):
    """One (image, mask) pair: bright shape on darker textured background."""
    texture = _smooth_field(rng.split("texture"), size)
    background = float(rng.split("bg").uniform() * 0.2 + 0.25)
    shape_level = float(rng.split("fg").uniform() * 0.25 + 0.65)
    shape_fn = _SHAPES[int(rng.split("shape_kind").integers(0, len(_SHAPES)))]
    mask = shape_fn(rng.split("shape"), size)
    image = np.where(mask, shape_level + 0.5 * texture, background + texture)
    return np.clip(image, 0.0, 1.0), mask


# ---------------------------------------------------------------------------
# corruption kernels


def _check_image(image) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ShapeError(f"corruptions expect a 2-d image, got shape {image.shape}")
    if image.min() < 0.0 or image.max() > 1.0:
        raise DataError("corruptions expect pixel values in [0, 1]")
    return image


def add_gaussian_noise(image, sigma: float, rng: SeededRng) -> np.ndarray:
    image = _check_image(image)
    if sigma == 0.0:
        return image.copy()
    return np.clip(image + rng.normal(size=image.shape, scale=sigma), 0.0, 1.0)


def box_blur(image, kernel: int) -> np.ndarray:
    """Mean filter with edge padding; kernel must be odd."""
    image = np.asarray(image, dtype=np.float64)
    if kernel < 1 or kernel % 2 == 0:
        raise ConfigError(f"blur kernel must be odd and >= 1, got {kernel}")
    if kernel == 1:
        return image.copy()
    pad = kernel // 2
    padded = np.pad(image, pad, mode="edge")
    windows = sliding_window_view(padded, (kernel, kernel))
    return windows.mean(axis=(2, 3))


def shift_brightness(image, shift: float) -> np.ndarray:
    return np.clip(_check_image(image) + shift, 0.0, 1.0)


def scale_contrast(image, factor: float) -> np.ndarray:
    """Compress toward mid-gray: out = 0.5 + factor * (in - 0.5)."""
    return np.clip(0.5 + factor * (_check_image(image) - 0.5), 0.0, 1.0)


def salt_pepper(image, fraction: float, rng: SeededRng) -> np.ndarray:
    image = _check_image(image).copy()
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"salt/pepper fraction must be in [0, 1], got {fraction}")
    count = int(round(fraction * image.size))
    if count == 0:
        return image
    flat_idx = rng.split("where").choice(image.size, size=count, replace=False)
    values = (rng.split("polarity").uniform(count) > 0.5).astype(np.float64)
    image.reshape(-1)[flat_idx] = values
    return image


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int
    seed: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown corruption kind {self.kind!r}; known: {KINDS}")
        if not 1 <= self.severity <= 5:
            raise ConfigError(f"severity must be in 1..5, got {self.severity}")


def apply_corruption(spec: CorruptionSpec, image) -> np.ndarray:
    """Deterministic severity-mapped corruption; output clipped to [0, 1]."""
    image = _check_image(image)
    rng = SeededRng(spec.seed).split("corrupt", spec.kind, spec.severity)
    s = spec.severity
    if spec.kind == "gaussian_noise":
        return add_gaussian_noise(image, NOISE_SIGMA_PER_LEVEL * s, rng)
    if spec.kind == "box_blur":
        return box_blur(image, BLUR_KERNEL[s])
    if spec.kind == "brightness":
        return shift_brightness(image, BRIGHTNESS_SHIFT_PER_LEVEL * s)
    if spec.kind == "contrast":
        return scale_contrast(image, 1.0 - CONTRAST_LOSS_PER_LEVEL * s)
    if spec.kind == "salt_pepper":
        return salt_pepper(image, PEPPER_FRACTION_PER_LEVEL * s, rng)
    raise ConfigError(f"unknown corruption kind {spec.kind!r}")


# ---------------------------------------------------------------------------
# dataset assembly


@dataclass
class BenchSample:
    image_id: int
    clean: np.ndarray
    corrupted: np.ndarray
    mask: np.ndarray
    spec: CorruptionSpec


def generate_clean_pairs(n: int, rng: SeededRng, size: int = IMAGE_SIZE) -> list:
    """Uncorrupted (image, mask) pairs, e.g. for backbone pretraining."""
    return [make_clean_sample(rng.split("clean", i), size) for i in range(n)]


def generate_bench(kinds, severities, per_cell: int, rng: SeededRng,
                   size: int = IMAGE_SIZE, start_id: int = 0) -> list[BenchSample]:
    """Full (kind x severity x per_cell) grid of corrupted samples."""
    for kind in kinds:
        if kind not in KINDS:
            raise ConfigError(f"unknown corruption kind {kind!r}; known: {KINDS}")
    if per_cell < 1:
        raise ConfigError(f"per_cell must be >= 1, got {per_cell}")
    samples = []
    image_id = start_id
    for kind in kinds:
        for severity in severities:
            for j in range(per_cell):
                srng = rng.split("sample", kind, int(severity), j)
                image, mask = make_clean_sample(srng.split("clean"), size)
                seed = int(srng.split("corrupt_seed").integers(0, 2**62))
                spec = CorruptionSpec(kind, int(severity), seed)
                samples.append(
                    BenchSample(image_id, image, apply_corruption(spec, image), mask, spec)
                )
                image_id += 1
    return samples


def seen_kinds(holdout: str = DEFAULT_HOLDOUT) -> tuple:
    if holdout not in KINDS:
        raise ConfigError(f"unknown holdout kind {holdout!r}; known: {KINDS}")
    return tuple(k for k in KINDS if k != holdout)


def train_bench(rng: SeededRng, per_cell: int, holdout: str = DEFAULT_HOLDOUT,
                severities=TRAIN_SEVERITIES, size: int = IMAGE_SIZE) -> list[BenchSample]:
    """Training split: seen kinds only, low severities."""
    return generate_bench(seen_kinds(holdout), severities, per_cell, rng.split("train"), size)


def test_bench(rng: SeededRng, per_cell: int, severities=TEST_SEVERITIES,
               size: int = IMAGE_SIZE) -> list[BenchSample]:
    """Evaluation split: all kinds (holdout included), held-out severities."""
    return generate_bench(KINDS, severities, per_cell, rng.split("test"), size)


# ---------------------------------------------------------------------------
# storage


def write_manifest(path, samples: list[BenchSample]) -> None:
    """Line-delimited sample records: {id, kind, severity, seed}."""
    with open(path, "w", encoding="utf-8") as f:
        for s in samples:
            rec = {"id": s.image_id, "kind": s.spec.kind,
                   "severity": s.spec.severity, "seed": s.spec.seed}
            f.write(json.dumps(rec) + "\n")


def read_manifest(path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def save_bench(path, samples: list[BenchSample]) -> None:
    from . import container as ct

    with open(path, "wb") as f:
        f.write(ct.MAGIC_DATASET)
        ct.write_u32(f, ct.FORMAT_VERSION)
        ct.write_u32(f, len(samples))
        ct.write_u32(f, samples[0].clean.shape[0] if samples else 0)
        for s in samples:
            ct.write_u32(f, s.image_id)
            ct.write_u32(f, KINDS.index(s.spec.kind))
            ct.write_u32(f, s.spec.severity)
            ct.write_u64(f, s.spec.seed)
            ct.write_array(f, s.clean)
            ct.write_array(f, s.corrupted)
            ct.write_array(f, s.mask.astype(np.float64))


def load_bench(path) -> list[BenchSample]:
    from . import container as ct

    with open(path, "rb") as f:
        ct.expect_magic(f, ct.MAGIC_DATASET)
        ct.read_version(f)
        n = ct.read_u32(f)
        size = ct.read_u32(f)
        samples = []
        for _ in range(n):
            image_id = ct.read_u32(f)
            kind = KINDS[ct.read_u32(f)]
            severity = ct.read_u32(f)
            seed = ct.read_u64(f)
            clean = ct.read_array(f).reshape(size, size)
            corrupted = ct.read_array(f).reshape(size, size)
            mask_f = ct.read_array(f).reshape(size, size)
            if not np.all((mask_f == 0.0) | (mask_f == 1.0)):
                raise DataError(f"sample {image_id} mask is not binary")
            samples.append(BenchSample(image_id, clean, corrupted, mask_f.astype(bool),
                                       CorruptionSpec(kind, severity, seed)))
        ct.expect_eof(f)
    return samples


def save_clean_pairs(path, pairs: list) -> None:
    from . import container as ct

    with open(path, "wb") as f:
        f.write(ct.MAGIC_CLEAN)
        ct.write_u32(f, ct.FORMAT_VERSION)
        ct.write_u32(f, len(pairs))
        ct.write_u32(f, pairs[0][0].shape[0] if pairs else 0)
        for image, mask in pairs:
            ct.write_array(f, image)
            ct.write_array(f, np.asarray(mask, dtype=np.float64))


def load_clean_pairs(path) -> list:
    from . import container as ct

    with open(path, "rb") as f:
        ct.expect_magic(f, ct.MAGIC_CLEAN)
        ct.read_version(f)
        n = ct.read_u32(f)
        size = ct.read_u32(f)
        pairs = []
        for _ in range(n):
            image = ct.read_array(f).reshape(size, size)
            mask = ct.read_array(f).reshape(size, size).astype(bool)
            pairs.append((image, mask))
        ct.expect_eof(f)
    return pairs
