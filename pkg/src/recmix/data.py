"""Datasets and per-sample augmentation.

Two sources: the CIFAR-10 binary layout (3073-byte records, label byte then
1024 bytes per channel) and a deterministic synthetic set of colored shapes
for fast tests. Images are stored normalized; the channel statistics ride
along so previews can be de-normalized back to bytes. Datasets are immutable
after load.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)
SYNTHETIC_MEAN = (0.5, 0.5, 0.5)
SYNTHETIC_STD = (0.25, 0.25, 0.25)

_RECORD_BYTES = 3073
_RECORDS_PER_FILE = 10000


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray          # (N, 3, H, W) float32, normalized
    labels: np.ndarray          # (N,) int64
    class_count: int
    split: str                  # train | test
    mean: np.ndarray            # (3,)
    std: np.ndarray             # (3,)

    def __len__(self) -> int:
        return self.images.shape[0]


def normalize(images01: np.ndarray, mean, std) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float32).reshape(1, 3, 1, 1)
    std = np.asarray(std, dtype=np.float32).reshape(1, 3, 1, 1)
    return ((images01 - mean) / std).astype(np.float32)


def denormalize(images: np.ndarray, mean, std) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float32).reshape(1, 3, 1, 1)
    std = np.asarray(std, dtype=np.float32).reshape(1, 3, 1, 1)
    single = images.ndim == 3
    if single:
        images = images[None]
    out = images * std + mean
    return out[0] if single else out


def _load_cifar_file(path: Path) -> tuple[np.ndarray, np.ndarray]:
    if not path.is_file():
        raise DataError(f"missing dataset file: {path}")
    raw = np.frombuffer(path.read_bytes(), dtype=np.uint8)
    if raw.size != _RECORDS_PER_FILE * _RECORD_BYTES:
        raise DataError(
            f"{path}: expected {_RECORDS_PER_FILE * _RECORD_BYTES} bytes "
            f"({_RECORDS_PER_FILE} records of {_RECORD_BYTES}), got {raw.size}")
    records = raw.reshape(_RECORDS_PER_FILE, _RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return images, labels


def load_cifar10_bin(directory) -> tuple[Dataset, Dataset]:
    """Parse data_batch_1..5.bin and test_batch.bin from a directory."""
    directory = Path(directory)
    train_parts = [_load_cifar_file(directory / f"data_batch_{i}.bin") for i in range(1, 6)]
    test_images, test_labels = _load_cifar_file(directory / "test_batch.bin")
    train_images = np.concatenate([p[0] for p in train_parts])
    train_labels = np.concatenate([p[1] for p in train_parts])
    mean = np.asarray(CIFAR10_MEAN, dtype=np.float32)
    std = np.asarray(CIFAR10_STD, dtype=np.float32)
    train = Dataset(normalize(train_images, mean, std), train_labels, 10, "train", mean, std)
    test = Dataset(normalize(test_images, mean, std), test_labels, 10, "test", mean, std)
    return train, test


# -- synthetic shapes ---------------------------------------------------------

_COLORS = np.array([
    (0.85, 0.20, 0.20),
    (0.20, 0.80, 0.25),
    (0.20, 0.35, 0.90),
    (0.90, 0.85, 0.20),
    (0.80, 0.25, 0.85),
    (0.25, 0.85, 0.85),
], dtype=np.float32)


def _draw_shape(canvas: np.ndarray, shape_idx: int, cy: int, cx: int, r: int, color: np.ndarray) -> None:
    size = canvas.shape[1]
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    if shape_idx == 0:      # filled square
        mask = (np.abs(dy) <= r) & (np.abs(dx) <= r)
    elif shape_idx == 1:    # disk
        mask = dy * dy + dx * dx <= r * r
    elif shape_idx == 2:    # cross
        bar = max(1, r // 2)
        mask = ((np.abs(dy) <= bar) & (np.abs(dx) <= r)) | ((np.abs(dx) <= bar) & (np.abs(dy) <= r))
    else:                   # diamond
        mask = np.abs(dy) + np.abs(dx) <= r
    canvas[:, mask] = color[:, None]


def make_synthetic(seed: int, n_classes: int, n_per_class: int, size: int = 32,
                   split: str = "train") -> Dataset:
    """Colored-shape classification set; class = (shape, color) combination.

    Identical seeds give bit-identical datasets. Shapes jitter in position
    and radius over a noisy dark background.
    """
    n_shapes = 4
    if n_classes > n_shapes * len(_COLORS):
        raise DataError(f"at most {n_shapes * len(_COLORS)} synthetic classes, got {n_classes}")
    rng = np.random.default_rng(seed)
    n = n_classes * n_per_class
    images = np.zeros((n, 3, size, size), dtype=np.float32)
    labels = np.repeat(np.arange(n_classes), n_per_class).astype(np.int64)
    for i, cls in enumerate(labels):
        shape_idx, color_idx = divmod(int(cls), len(_COLORS))
        canvas = rng.uniform(0.05, 0.15, size=(3, size, size)).astype(np.float32)
        jitter = size // 8
        cy = size // 2 + int(rng.integers(-jitter, jitter + 1))
        cx = size // 2 + int(rng.integers(-jitter, jitter + 1))
        r = size // 4 + int(rng.integers(-2, 3))
        _draw_shape(canvas, shape_idx, cy, cx, r, _COLORS[color_idx])
        images[i] = canvas
    order = rng.permutation(n)
    mean = np.asarray(SYNTHETIC_MEAN, dtype=np.float32)
    std = np.asarray(SYNTHETIC_STD, dtype=np.float32)
    return Dataset(normalize(images[order], mean, std), labels[order], n_classes, split, mean, std)


# -- augmentation -------------------------------------------------------------

@dataclass
class AugPolicy:
    pad: int = 4
    crop: int = 32
    hflip_prob: float = 0.5
    enabled: bool = True

    def validate(self, image_extent: int) -> None:
        if self.crop > image_extent + 2 * self.pad:
            raise ValueError(f"crop {self.crop} exceeds padded extent {image_extent + 2 * self.pad}")


def augment(image: np.ndarray, policy: AugPolicy, rng: np.random.Generator) -> np.ndarray:
    """Reflect-pad, random crop, random horizontal flip on one (C, H, W) image."""
    if not policy.enabled:
        return image
    policy.validate(image.shape[1])
    padded = np.pad(image, ((0, 0), (policy.pad, policy.pad), (policy.pad, policy.pad)), mode="reflect")
    max_off = padded.shape[1] - policy.crop
    oy = int(rng.integers(0, max_off + 1))
    ox = int(rng.integers(0, max_off + 1))
    out = padded[:, oy:oy + policy.crop, ox:ox + policy.crop]
    if rng.random() < policy.hflip_prob:
        out = out[:, :, ::-1]
    return np.ascontiguousarray(out)


def augment_batch(images: np.ndarray, policy: AugPolicy, rng: np.random.Generator) -> np.ndarray:
    if not policy.enabled:
        return images
    return np.stack([augment(img, policy, rng) for img in images])


# -- PPM emission --------------------------------------------------------------

def write_ppm(path, image01: np.ndarray) -> None:
    """Binary PPM (P6) from a (3, H, W) array of values in [0, 1]."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img = np.clip(np.asarray(image01), 0.0, 1.0)
    pixels = (img * 255.0 + 0.5).astype(np.uint8).transpose(1, 2, 0)  # HWC
    h, w = pixels.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def read_ppm(path) -> np.ndarray:
    """Inverse of write_ppm; returns (3, H, W) floats in [0, 1]."""
    data = Path(path).read_bytes()
    if not data.startswith(b"P6"):
        raise DataError(f"{path}: not a binary PPM")
    parts = data.split(b"\n", 3)
    w, h = (int(v) for v in parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=np.uint8, count=h * w * 3).reshape(h, w, 3)
    return pixels.transpose(2, 0, 1).astype(np.float32) / 255.0
