"""Real-dataset loading, class-conditional sampling, and the synthetic
benchmark generator.

Images are held as float32 (M, C, H, W), scaled to [0, 1] and then
channel-standardized with the split's own statistics; the statistics are
kept so exported images can be de-normalized.
"""

import struct
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import _binio as bio
from .errors import FormatError, ShapeError
from .rng import substream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CONTAINER_MAGIC = b"DCDS"
CONTAINER_VERSION = 1


@dataclass
class RealDataset:
    images: np.ndarray  # (M, C, H, W) float32, standardized
    labels: np.ndarray  # (M,) int64
    num_classes: int
    class_index: List[np.ndarray]
    mean: np.ndarray  # (C,) float64, of the [0,1]-scaled images
    std: np.ndarray  # (C,) float64

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def resolution(self):
        return self.images.shape[2], self.images.shape[3]

    @property
    def channels(self) -> int:
        return self.images.shape[1]

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        """Map standardized pixels back to the [0, 1] scale."""
        c = self.channels
        return x * self.std.reshape(1, c, 1, 1).astype(x.dtype) + self.mean.reshape(
            1, c, 1, 1
        ).astype(x.dtype)


def _build_class_index(labels: np.ndarray, num_classes: int) -> List[np.ndarray]:
    return [np.flatnonzero(labels == c) for c in range(num_classes)]


def standardize(raw01: np.ndarray, labels: np.ndarray, num_classes: int) -> RealDataset:
    """Build a dataset from [0,1]-scaled images using its own statistics."""
    if raw01.ndim != 4:
        raise ShapeError(f"images must be (M, C, H, W), got {raw01.shape}")
    if labels.shape[0] != raw01.shape[0]:
        raise FormatError(
            f"image count {raw01.shape[0]} does not match label count {labels.shape[0]}"
        )
    mean = raw01.astype(np.float64).mean(axis=(0, 2, 3))
    std = raw01.astype(np.float64).std(axis=(0, 2, 3))
    std = np.maximum(std, 1e-8)
    c = raw01.shape[1]
    images = (raw01 - mean.reshape(1, c, 1, 1)) / std.reshape(1, c, 1, 1)
    labels = labels.astype(np.int64)
    return RealDataset(
        images=images.astype(np.float32),
        labels=labels,
        num_classes=num_classes,
        class_index=_build_class_index(labels, num_classes),
        mean=mean,
        std=std,
    )


def load_idx(images_path, labels_path) -> RealDataset:
    """Load an MNIST-family IDX image/label pair (big-endian magic)."""
    with open(images_path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">iiii", bio.read_exact(f, 16))
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(f"bad IDX image magic 0x{magic:08x} in {images_path}")
        raw = bio.read_exact(f, count * rows * cols)
    images = np.frombuffer(raw, dtype=np.uint8).reshape(count, 1, rows, cols)
    with open(labels_path, "rb") as f:
        magic, lcount = struct.unpack(">ii", bio.read_exact(f, 8))
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(f"bad IDX label magic 0x{magic:08x} in {labels_path}")
        labels = np.frombuffer(bio.read_exact(f, lcount), dtype=np.uint8).astype(np.int64)
    if count != lcount:
        raise FormatError(f"IDX image count {count} does not match label count {lcount}")
    num_classes = int(labels.max()) + 1 if count else 0
    return standardize(images.astype(np.float32) / 255.0, labels, num_classes)


def save_container(path, dataset: RealDataset) -> None:
    """Write the native container (standardized float32 payload)."""
    with open(path, "wb") as f:
        f.write(CONTAINER_MAGIC)
        bio.write_u16(f, CONTAINER_VERSION)
        bio.write_u8(f, bio.DTYPE_F32)
        bio.write_u8(f, dataset.images.ndim)
        for e in dataset.images.shape:
            bio.write_u32(f, e)
        bio.write_u32(f, dataset.num_classes)
        f.write(dataset.labels.astype("<u4").tobytes())
        f.write(dataset.images.astype("<f4").tobytes())


def load_container(path) -> RealDataset:
    with open(path, "rb") as f:
        magic = bio.read_exact(f, 4)
        if magic != CONTAINER_MAGIC:
            raise FormatError(f"bad container magic {magic!r} in {path}")
        version = bio.read_u16(f)
        if version != CONTAINER_VERSION:
            raise FormatError(f"unsupported container version {version}")
        code = bio.read_u8(f)
        rank = bio.read_u8(f)
        if rank != 4:
            raise FormatError(f"expected rank-4 image data, got rank {rank}")
        shape = tuple(bio.read_u32(f) for _ in range(rank))
        num_classes = bio.read_u32(f)
        m = shape[0]
        labels = np.frombuffer(bio.read_exact(f, 4 * m), dtype="<u4").astype(np.int64)
        if m and labels.max() >= num_classes:
            raise FormatError(
                f"label {labels.max()} out of range for {num_classes} classes"
            )
        count = int(np.prod(shape))
        if code == bio.DTYPE_F32:
            images = np.frombuffer(bio.read_exact(f, 4 * count), dtype="<f4")
            images = images.astype(np.float32).reshape(shape)
            # float payload is already standardized; stats are identity
            c = shape[1]
            return RealDataset(
                images=images,
                labels=labels,
                num_classes=num_classes,
                class_index=_build_class_index(labels, num_classes),
                mean=np.zeros(c),
                std=np.ones(c),
            )
        if code == bio.DTYPE_U8:
            raw = np.frombuffer(bio.read_exact(f, count), dtype=np.uint8).reshape(shape)
            return standardize(raw.astype(np.float32) / 255.0, labels, num_classes)
        raise FormatError(f"unknown container dtype code {code}")


def sample_class_batch(
    dataset: RealDataset, c: int, batch_size: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw a batch from class c: without replacement when it fits, with
    replacement otherwise. Deterministic for a given stream state."""
    idx = dataset.class_index[c]
    if idx.size == 0:
        raise ShapeError(f"class {c} is empty")
    replace = batch_size > idx.size
    chosen = rng.choice(idx, size=batch_size, replace=replace)
    return dataset.images[chosen]


def make_gaussian_patches(
    num_classes: int,
    per_class: int,
    resolution: int,
    seed: int,
    split: str = "train",
    channels: int = 1,
    blobs: int = 3,
    noise: float = 2.0,
    jitter: float = 0.25,
) -> RealDataset:
    """Synthetic benchmark: class-specific Gaussian-blob patterns plus
    heavy pixel noise.

    Patterns depend only on (seed, class), so different `split` values
    share classes while drawing fresh examples. The noise level is chosen
    so a fully trained ConvNet separates the classes easily while tiny
    real subsets stay noisy.
    """
    if num_classes < 2:
        raise ShapeError("need at least 2 classes")
    yy, xx = np.mgrid[0:resolution, 0:resolution].astype(np.float64)
    patterns = np.empty((num_classes, channels, resolution, resolution))
    for c in range(num_classes):
        prng = substream(seed, f"patches:pattern:{c}")
        for ch in range(channels):
            pat = np.zeros((resolution, resolution))
            for _ in range(blobs):
                cy, cx = prng.uniform(0.15, 0.85, size=2) * resolution
                sigma = prng.uniform(0.08, 0.18) * resolution
                amp = prng.uniform(0.6, 1.4) * prng.choice([-1.0, 1.0])
                pat += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
            pat /= max(np.sqrt((pat**2).mean()), 1e-12)
            patterns[c, ch] = pat
    erng = substream(seed, f"patches:examples:{split}")
    m = num_classes * per_class
    labels = np.repeat(np.arange(num_classes), per_class).astype(np.int64)
    amps = 1.0 + jitter * erng.standard_normal(m)
    eps = erng.standard_normal((m, channels, resolution, resolution))
    raw = amps.reshape(m, 1, 1, 1) * patterns[labels] + noise * eps
    lo, hi = raw.min(), raw.max()
    raw01 = (raw - lo) / max(hi - lo, 1e-12)
    return standardize(raw01.astype(np.float32), labels, num_classes)
