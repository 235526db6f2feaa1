"""Dataset ingestion, normalization, augmentation, splits, and label noise.

Datasets are immutable bags of flat float32 inputs plus integer labels.
Images keep (height, width, channels) metadata so augmentation and
per-channel normalization know the geometry; purely tabular data leaves it
unset and gets per-feature statistics instead.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, FormatError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class Dataset:
    """n examples of d features each, with optional image geometry."""

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    image_shape: tuple[int, int, int] | None = None
    normalization: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        x = np.asarray(self.inputs)
        y = np.asarray(self.labels)
        if x.ndim != 2 or x.shape[0] < 1:
            raise DataError(f"inputs must be a nonempty (n, d) matrix, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise DataError(f"{x.shape[0]} inputs vs labels of shape {y.shape}")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise DataError(f"labels must lie in [0, {self.num_classes})")
        if self.image_shape is not None:
            h, w, ch = self.image_shape
            if h * w * ch != x.shape[1]:
                raise DataError(f"image shape {self.image_shape} does not flatten to {x.shape[1]}")
        if self.normalization is not None and not np.all(self.normalization[1] > 0):
            raise DataError("normalization std entries must be positive")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y.astype(np.int64))

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class NoisyDataset:
    """A dataset plus a corrupted copy of its training labels.

    noisy_labels agrees with base.labels outside the mask; inside it the
    label was re-drawn uniformly over all classes, so roughly 1/C of the
    masked entries keep their true label by chance.
    """

    base: Dataset
    noisy_labels: np.ndarray
    noise_mask: np.ndarray
    q: float
    noise_seed: int

    def __post_init__(self):
        y = np.asarray(self.noisy_labels)
        mask = np.asarray(self.noise_mask)
        n = self.base.n
        if y.shape != (n,) or mask.shape != (n,) or mask.dtype != bool:
            raise DataError("noisy labels and mask must be 1-D with one entry per example")
        if int(mask.sum()) != int(self.q * n):
            raise DataError(f"mask marks {int(mask.sum())} entries, expected floor({self.q}*{n})")
        if np.any(y[~mask] != self.base.labels[~mask]):
            raise DataError("labels outside the noise mask must be untouched")
        if y.min() < 0 or y.max() >= self.base.num_classes:
            raise DataError("noisy labels out of class range")

    @property
    def num_flipped(self) -> int:
        return int(self.noise_mask.sum())


@dataclass(frozen=True)
class AugmentSpec:
    """Random horizontal flips plus a size-preserving pad-and-crop."""

    horizontal_flip_prob: float = 0.5
    pad_pixels: int = 4

    def __post_init__(self):
        if not 0.0 <= self.horizontal_flip_prob <= 1.0:
            raise ConfigurationError(f"flip probability must lie in [0, 1], got {self.horizontal_flip_prob}")
        if self.pad_pixels < 0:
            raise ConfigurationError(f"pad_pixels must be >= 0, got {self.pad_pixels}")


@dataclass(frozen=True)
class ChunkStream:
    """Equal partition of training indices into sequentially arriving chunks."""

    chunks: tuple[np.ndarray, ...]

    def __post_init__(self):
        sizes = [len(c) for c in self.chunks]
        if not sizes or min(sizes) < 1:
            raise ConfigurationError("every chunk must be nonempty")
        if max(sizes) - min(sizes) > 1:
            raise ConfigurationError(f"chunk sizes must differ by at most 1, got {sizes}")
        all_idx = np.concatenate(self.chunks)
        if len(np.unique(all_idx)) != len(all_idx):
            raise ConfigurationError("chunks must be disjoint")

    @property
    def num_chunks(self) -> int:
        return len(self.chunks)

    def cumulative_union(self, k: int) -> np.ndarray:
        """Indices of chunks 1..k, in arrival order."""
        if not 1 <= k <= self.num_chunks:
            raise ConfigurationError(f"chunk count {k} outside 1..{self.num_chunks}")
        return np.concatenate(self.chunks[:k])


def _read_be_u32(buf: bytes, offset: int, path, what: str) -> int:
    if len(buf) < offset + 4:
        raise FormatError(f"{path}: truncated before {what} at byte {offset}")
    return struct.unpack(">I", buf[offset : offset + 4])[0]


def load_idx(images_path, labels_path) -> Dataset:
    """MNIST-style IDX pair: big-endian headers, one byte per pixel/label."""
    img_buf = Path(images_path).read_bytes()
    lbl_buf = Path(labels_path).read_bytes()

    magic = _read_be_u32(img_buf, 0, images_path, "image magic")
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(f"{images_path}: bad image magic 0x{magic:08x} at byte 0")
    n = _read_be_u32(img_buf, 4, images_path, "image count")
    rows = _read_be_u32(img_buf, 8, images_path, "row count")
    cols = _read_be_u32(img_buf, 12, images_path, "column count")
    want = 16 + n * rows * cols
    if len(img_buf) != want:
        raise FormatError(f"{images_path}: expected {want} bytes, found {len(img_buf)} (payload from byte 16)")

    magic = _read_be_u32(lbl_buf, 0, labels_path, "label magic")
    if magic != IDX_LABEL_MAGIC:
        raise FormatError(f"{labels_path}: bad label magic 0x{magic:08x} at byte 0")
    n_lbl = _read_be_u32(lbl_buf, 4, labels_path, "label count")
    if len(lbl_buf) != 8 + n_lbl:
        raise FormatError(f"{labels_path}: expected {8 + n_lbl} bytes, found {len(lbl_buf)} (payload from byte 8)")
    if n_lbl != n:
        raise FormatError(f"{images_path}: {n} images but {labels_path} has {n_lbl} labels")
    if n == 0:
        raise FormatError(f"{images_path}: zero images")

    pixels = np.frombuffer(img_buf, dtype=np.uint8, offset=16).reshape(n, rows * cols)
    labels = np.frombuffer(lbl_buf, dtype=np.uint8, offset=8).astype(np.int64)
    inputs = (pixels.astype(np.float32) / 255.0).reshape(n, rows * cols)
    return Dataset(inputs, labels, int(labels.max()) + 1, image_shape=(rows, cols, 1))


def load_csv(path) -> Dataset:
    """Rows of `label,f0,f1,...`; every cell must parse as a number."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if not header or header[0] != "label":
            raise FormatError(f"{path}: row 1 must be a header starting with 'label', got {header[:3]}")
        dim = len(header) - 1
        if dim < 1:
            raise FormatError(f"{path}: header defines no feature columns")
        labels, rows = [], []
        for r, row in enumerate(reader, start=2):
            if len(row) != dim + 1:
                raise FormatError(f"{path}: row {r} has {len(row)} cells, expected {dim + 1}")
            try:
                labels.append(int(row[0]))
            except ValueError:
                raise FormatError(f"{path}: row {r}, column 1: {row[0]!r} is not an integer label") from None
            try:
                rows.append([float(c) for c in row[1:]])
            except ValueError:
                bad = next(i for i, c in enumerate(row[1:], start=2) if not _is_float(c))
                raise FormatError(f"{path}: row {r}, column {bad}: not a number") from None
    if not rows:
        raise FormatError(f"{path}: no data rows")
    y = np.array(labels, dtype=np.int64)
    if y.min() < 0:
        raise FormatError(f"{path}: negative label {y.min()}")
    return Dataset(np.array(rows, dtype=np.float32), y, int(y.max()) + 1)


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def save_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"f{i}" for i in range(ds.dim)])
        for label, row in zip(ds.labels, ds.inputs):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])


def make_synthetic(
    num_classes: int,
    dim: int,
    per_class: int,
    class_separation: float,
    seed: int,
    image_hw: tuple[int, int] | None = None,
) -> Dataset:
    """Gaussian mixture: class means of the given norm, isotropic unit noise.

    image_hw tags the features as a single-channel (h, w) image so the
    augmentation pipeline accepts synthetic data; it requires h*w == dim.
    """
    if num_classes < 2:
        raise ConfigurationError(f"need at least 2 classes, got {num_classes}")
    if dim < 1 or per_class < 1:
        raise ConfigurationError(f"dim and per_class must be >= 1, got {dim}, {per_class}")
    if class_separation < 0:
        raise ConfigurationError(f"class separation must be >= 0, got {class_separation}")
    image_shape = None
    if image_hw is not None:
        h, w = image_hw
        if h * w != dim:
            raise ConfigurationError(f"image_hw {image_hw} does not flatten to dim {dim}")
        image_shape = (h, w, 1)
    rng = np.random.Generator(np.random.PCG64(seed))
    raw = rng.normal(size=(num_classes, dim))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    means = raw / norms * class_separation
    labels = np.repeat(np.arange(num_classes), per_class)
    inputs = means[labels] + rng.normal(size=(labels.size, dim))
    order = rng.permutation(labels.size)
    return Dataset(inputs[order].astype(np.float32), labels[order], num_classes, image_shape=image_shape)


def inject_label_noise(ds: Dataset, q: float, seed: int) -> NoisyDataset:
    """Re-draw exactly floor(q*n) labels uniformly over all classes.

    The re-drawn label may coincide with the true one, so the expected
    fraction actually corrupted is q*(C-1)/C.
    """
    if not 0.0 <= q <= 1.0:
        raise ConfigurationError(f"noise fraction must lie in [0, 1], got {q}")
    rng = np.random.Generator(np.random.PCG64(seed))
    k = int(q * ds.n)
    mask = np.zeros(ds.n, dtype=bool)
    noisy = ds.labels.copy()
    if k > 0:
        chosen = rng.choice(ds.n, size=k, replace=False)
        mask[chosen] = True
        noisy[chosen] = rng.integers(0, ds.num_classes, size=k)
    return NoisyDataset(ds, noisy, mask, q, seed)


def augment_batch(
    inputs: np.ndarray,
    image_shape: tuple[int, int, int],
    spec: AugmentSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    """Flip-then-crop a batch of flattened images; shape and labels untouched."""
    if image_shape is None:
        raise ConfigurationError("augmentation needs image geometry; this data has none")
    x = np.asarray(inputs)
    h, w, ch = image_shape
    if x.ndim != 2 or x.shape[1] != h * w * ch:
        raise ConfigurationError(f"batch shape {x.shape} does not match image shape {image_shape}")
    n = x.shape[0]
    imgs = x.reshape(n, h, w, ch)
    flips = rng.random(n) < spec.horizontal_flip_prob
    imgs = np.where(flips[:, None, None, None], imgs[:, :, ::-1, :], imgs)
    pad = spec.pad_pixels
    if pad > 0:
        offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
        imgs = pad_crop(imgs, pad, offsets)
    return imgs.reshape(n, h * w * ch)


def pad_crop(images: np.ndarray, pad: int, offsets: np.ndarray) -> np.ndarray:
    """Zero-pad each side, then cut the original size at per-image offsets.

    Offset (pad, pad) is the centered cut: it returns the image unchanged.
    """
    n, h, w, ch = images.shape
    padded = np.pad(images, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    out = np.empty_like(images)
    for i in range(n):
        r, c = int(offsets[i, 0]), int(offsets[i, 1])
        out[i] = padded[i, r : r + h, c : c + w, :]
    return out


def subset(ds: Dataset, indices: np.ndarray) -> Dataset:
    idx = np.asarray(indices)
    return replace(ds, inputs=ds.inputs[idx], labels=ds.labels[idx])


def split_indices(labels: np.ndarray, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Stratified index split; every class lands on both sides when it can.

    The validation side gets floor(val_fraction*n) indices, allocated to
    classes proportionally (largest remainder). Classes with at least two
    examples are then repaired to appear on both sides if the budget allows.
    """
    y = np.asarray(labels)
    n = y.shape[0]
    if not 0.0 < val_fraction < 1.0:
        raise ConfigurationError(f"val fraction must lie strictly in (0, 1), got {val_fraction}")
    n_val = int(val_fraction * n)
    if n_val < 1 or n_val >= n:
        raise ConfigurationError(f"fraction {val_fraction} of {n} examples leaves one side empty")
    rng = np.random.Generator(np.random.PCG64(seed))
    classes = np.unique(y)
    per_class = {int(c): rng.permutation(np.flatnonzero(y == c)) for c in classes}
    counts = {c: len(idx) for c, idx in per_class.items()}
    # proportional quota with largest-remainder rounding to hit n_val exactly
    quota = {c: n_val * counts[c] / n for c in per_class}
    alloc = {c: int(quota[c]) for c in per_class}
    leftovers = sorted(per_class, key=lambda c: (alloc[c] - quota[c], c))
    for c in leftovers:
        if sum(alloc.values()) == n_val:
            break
        alloc[c] += 1
    for c in per_class:
        # keep at least one example of every class on the train side
        if alloc[c] >= counts[c]:
            alloc[c] = counts[c] - 1
    while sum(alloc.values()) < n_val:
        c = max(per_class, key=lambda c: counts[c] - 1 - alloc[c])
        if alloc[c] >= counts[c] - 1:
            raise ConfigurationError("validation fraction too large for the class counts")
        alloc[c] += 1
    if len(classes) <= n_val:
        for c in per_class:
            if alloc[c] == 0 and counts[c] >= 2:
                donor = max(per_class, key=lambda d: alloc[d])
                if alloc[donor] > 1:
                    alloc[donor] -= 1
                    alloc[c] = 1
    val_parts = [per_class[c][: alloc[c]] for c in sorted(per_class)]
    train_parts = [per_class[c][alloc[c] :] for c in sorted(per_class)]
    train_idx = rng.permutation(np.concatenate(train_parts))
    val_idx = rng.permutation(np.concatenate(val_parts))
    return train_idx, val_idx


def split(ds: Dataset, val_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    train_idx, val_idx = split_indices(ds.labels, val_fraction, seed)
    return subset(ds, train_idx), subset(ds, val_idx)


def make_chunks(ds: Dataset, num_chunks: int, seed: int) -> ChunkStream:
    """Seeded equal partition of the index set into arrival-ordered chunks."""
    if not 1 <= num_chunks <= ds.n:
        raise ConfigurationError(f"chunk count {num_chunks} outside 1..{ds.n}")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(ds.n)
    return ChunkStream(tuple(np.array_split(order, num_chunks)))


def compute_normalization(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Mean and std per channel (images) or per feature (tabular), float64."""
    x = ds.inputs.astype(np.float64)
    if ds.image_shape is not None:
        h, w, ch = ds.image_shape
        per_channel = x.reshape(ds.n, h * w, ch)
        mean = per_channel.mean(axis=(0, 1))
        std = per_channel.std(axis=(0, 1))
    else:
        mean = x.mean(axis=0)
        std = x.std(axis=0)
    return mean, np.maximum(std, STD_FLOOR)


def apply_normalization(ds: Dataset, mean: np.ndarray, std: np.ndarray) -> Dataset:
    x = ds.inputs.astype(np.float64)
    if ds.image_shape is not None:
        h, w, ch = ds.image_shape
        x = ((x.reshape(ds.n, h * w, ch) - mean) / std).reshape(ds.n, ds.dim)
    else:
        x = (x - mean) / std
    return replace(ds, inputs=x.astype(np.float32), normalization=(mean, std))
