"""Synthetic blob dataset, directory loading, labeled/unlabeled splits, and F1 evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


@dataclass
class Sample:
    """One image with an optional binary mask; mask present means labeled."""

    image: np.ndarray  # (H, W, C) float32 in [0, 1]
    mask: np.ndarray | None  # (H, W) uint8 in {0, 1}
    id: str

    def __post_init__(self):
        if self.mask is not None and self.mask.shape != self.image.shape[:2]:
            raise ValueError(
                f"sample {self.id}: mask shape {self.mask.shape} does not match "
                f"image {self.image.shape[:2]}"
            )

    @property
    def labeled(self) -> bool:
        return self.mask is not None


@dataclass
class UnlabeledImage:
    """Training view of an unlabeled sample: image only, no mask accessor."""

    image: np.ndarray
    id: str


@dataclass
class SplitDataset:
    """Labeled/unlabeled/test partition. Unlabeled samples keep hidden ground
    truth for pseudo-label scoring; training code must consume
    :meth:`unlabeled_images` instead."""

    labeled: list[Sample]
    unlabeled: list[Sample]
    test: list[Sample]
    label_fraction: float
    seed: int

    def __post_init__(self):
        ids = [s.id for s in self.labeled + self.unlabeled + self.test]
        if len(ids) != len(set(ids)):
            raise ValueError("split ids must be disjoint")

    def unlabeled_images(self) -> list[UnlabeledImage]:
        return [UnlabeledImage(s.image, s.id) for s in self.unlabeled]


def ellipse_distance_sq(
    size: int, cx: float, cy: float, a: float, b: float, phi: float
) -> np.ndarray:
    """Normalized squared elliptical distance per pixel; the support is d2 <= 1."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    u = (dx * np.cos(phi) + dy * np.sin(phi)) / a
    v = (-dx * np.sin(phi) + dy * np.cos(phi)) / b
    return u**2 + v**2


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    # blotchy texture (tissue-like): low-passed noise without a preferred
    # orientation, plus a mild top-to-bottom illumination gradient that gives
    # the corpus a canonical "up" (as microscope vignetting does)
    base = rng.uniform(0.2, 0.3)
    sigma = rng.uniform(2.0, 6.0)
    field = gaussian_filter(rng.standard_normal((size, size)), sigma, mode="wrap")
    field /= max(field.std(), 1e-9)
    bg = base + rng.uniform(0.05, 0.09) * field
    slope = rng.uniform(0.08, 0.14)
    bg += slope * (np.arange(size, dtype=np.float64)[:, None] / size - 0.5)
    return bg


def _one_sample(
    rng: np.random.Generator, size: int, blobs: tuple[int, int], noise_level: float, channels: int
) -> tuple[np.ndarray, np.ndarray]:
    intensity = _background(rng, size)
    mask = np.zeros((size, size), dtype=bool)
    n_blobs = int(rng.integers(blobs[0], blobs[1] + 1))
    for _ in range(n_blobs):
        cx, cy = rng.uniform(0.15 * size, 0.85 * size, size=2)
        a, b = rng.uniform(0.06 * size, 0.17 * size, size=2)
        phi = rng.uniform(0, np.pi)
        peak = rng.uniform(0.35, 0.65)
        d2 = ellipse_distance_sq(size, cx, cy, a, b, phi)
        support = d2 <= 1.0
        intensity = np.where(support, intensity + peak * (1.0 - d2), intensity)
        mask |= support
    img = np.repeat(intensity[:, :, None], channels, axis=2)
    img = img * rng.uniform(0.85, 1.15, size=channels)[None, None, :]
    if noise_level > 0:
        img = img + noise_level * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32), mask.astype(np.uint8)


def generate_synthetic_dataset(
    count: int,
    size: int = 48,
    blobs_per_image: tuple[int, int] = (3, 8),
    noise_level: float = 0.08,
    seed: int = 0,
    channels: int = 3,
    id_prefix: str = "synth",
) -> list[Sample]:
    """Blob-segmentation images: bright ellipses with smooth falloff over a
    textured background, plus additive noise. The mask is the exact ellipse
    support and is unaffected by noise."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if size < 8:
        raise ValueError(f"size must be >= 8, got {size}")
    if blobs_per_image[0] < 0 or blobs_per_image[1] < blobs_per_image[0]:
        raise ValueError(f"invalid blobs_per_image range {blobs_per_image}")
    samples = []
    # one child stream per image: image i is identical whatever count or
    # noise_level the other images were generated with
    for idx, rng in enumerate(np.random.default_rng(seed).spawn(count)):
        img, mask = _one_sample(rng, size, blobs_per_image, noise_level, channels)
        samples.append(Sample(img, mask, f"{id_prefix}_{idx:03d}"))
    return samples


def _load_image(path: Path, size: int, *, is_mask: bool) -> np.ndarray:
    img = Image.open(path)
    img = img.convert("L" if is_mask else "RGB")
    if img.width != img.height:
        side = min(img.width, img.height)
        left = (img.width - side) // 2
        top = (img.height - side) // 2
        img = img.crop((left, top, left + side, top + side))
    if img.width != size:
        img = img.resize((size, size), Image.NEAREST if is_mask else Image.BILINEAR)
    arr = np.asarray(img)
    if is_mask:
        return (arr >= 128).astype(np.uint8)
    return (arr.astype(np.float32) / 255.0).reshape(size, size, 3)


def load_directory_dataset(path: str | Path, size: int = 48) -> list[Sample]:
    """Load ``<path>/images/*.png`` with optional matching ``<path>/masks/*.png``.

    Images are scaled to [0, 1], masks binarized at 128, everything
    center-cropped and resized to ``size`` x ``size``. Non-image files are
    skipped with a warning; images without masks become unlabeled samples.
    """
    root = Path(path)
    images_dir = root / "images"
    if not images_dir.is_dir():
        raise FileNotFoundError(f"missing images directory: {images_dir}")
    masks_dir = root / "masks"
    samples = []
    for img_path in sorted(images_dir.iterdir()):
        if img_path.suffix.lower() not in IMAGE_EXTENSIONS:
            logger.warning("skipping non-image file %s", img_path)
            continue
        mask = None
        mask_path = masks_dir / img_path.name
        if masks_dir.is_dir() and mask_path.exists():
            raw_img = Image.open(img_path)
            raw_mask = Image.open(mask_path)
            if raw_img.size != raw_mask.size:
                raise ValueError(
                    f"{img_path.name}: image size {raw_img.size} does not match "
                    f"mask size {raw_mask.size}"
                )
            mask = _load_image(mask_path, size, is_mask=True)
        samples.append(Sample(_load_image(img_path, size, is_mask=False), mask, img_path.stem))
    return samples


def _floor_min_one(n: int, fraction: float) -> int:
    return max(1, int(np.floor(n * fraction)))


def split_labeled_unlabeled(
    data: list[Sample], label_fraction: float, test_fraction: float, seed: int
) -> SplitDataset:
    """Seeded shuffle, then carve off the test set and the labeled subset.

    ``label_fraction`` may be 1.0 (fully-labeled training pool, empty D_U);
    counts round down with a minimum of 1.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if not 0.0 < label_fraction <= 1.0:
        raise ValueError(f"label_fraction must be in (0, 1], got {label_fraction}")
    if any(not s.labeled for s in data):
        raise ValueError("splitting requires fully annotated input data")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(data))
    n_test = _floor_min_one(len(data), test_fraction)
    if n_test >= len(data):
        raise ValueError("test fraction leaves no training data")
    test = [data[i] for i in order[:n_test]]
    pool = [data[i] for i in order[n_test:]]
    n_labeled = len(pool) if label_fraction == 1.0 else _floor_min_one(len(pool), label_fraction)
    return SplitDataset(pool[:n_labeled], pool[n_labeled:], test, label_fraction, seed)


def split_train_pool(
    pool: list[Sample], test: list[Sample], label_fraction: float, seed: int
) -> SplitDataset:
    """Split an already-separated train pool, keeping the given test set."""
    if not 0.0 < label_fraction <= 1.0:
        raise ValueError(f"label_fraction must be in (0, 1], got {label_fraction}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pool))
    n_labeled = len(pool) if label_fraction == 1.0 else _floor_min_one(len(pool), label_fraction)
    labeled = [pool[i] for i in order[:n_labeled]]
    unlabeled = [pool[i] for i in order[n_labeled:]]
    return SplitDataset(labeled, unlabeled, list(test), label_fraction, seed)


def _counts(pred: np.ndarray, gt: np.ndarray, threshold: float) -> tuple[int, int, int, int]:
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    pred_b = pred > threshold
    gt_b = gt > 0
    tp = int(np.sum(pred_b & gt_b))
    fp = int(np.sum(pred_b & ~gt_b))
    fn = int(np.sum(~pred_b & gt_b))
    tn = int(np.sum(~pred_b & ~gt_b))
    return tp, fp, fn, tn


def f1_score(pred: np.ndarray, gt: np.ndarray, threshold: float = 0.5) -> float:
    """Foreground F1 after binarizing ``pred`` at ``threshold``.

    Both-empty counts as a perfect 1.0; exactly one empty scores 0.0.
    """
    tp, fp, fn, _ = _counts(pred, gt, threshold)
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def balanced_accuracy(pred: np.ndarray, gt: np.ndarray, threshold: float = 0.5) -> float:
    """Unweighted mean of foreground and background recall (absent class counts 1)."""
    tp, fp, fn, tn = _counts(pred, gt, threshold)
    recall_fg = tp / (tp + fn) if tp + fn > 0 else 1.0
    recall_bg = tn / (tn + fp) if tn + fp > 0 else 1.0
    return 0.5 * (recall_fg + recall_bg)
