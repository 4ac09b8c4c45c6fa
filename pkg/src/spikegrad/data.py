"""Dataset ingestion (IDX and CIFAR binary) and seeded synthetic generators.

Loaders keep everything in memory and always emit float64 features scaled
to [0, 1]; labels are int64. Synthetic generators are deterministic per
seed: separable Gaussian blobs, the classic two-spirals task, and a
10-class glyph-image task that exercises the conv stack.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DataFormatError",
    "LabeledDataset",
    "DatasetSpec",
    "load_idx",
    "load_cifar_bin",
    "gen_synthetic",
    "write_idx_images",
    "write_idx_labels",
    "load_dataset",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR10_RECORD = 1 + 3072
CIFAR100_RECORD = 2 + 3072


class DataFormatError(ValueError):
    """Input file violates its declared binary format."""


@dataclass
class LabeledDataset:
    """Feature array [N, ...], integer labels [N], and class count."""

    x: np.ndarray
    y: np.ndarray
    n_classes: int
    mean: float | None = None
    std: float | None = None

    def __post_init__(self) -> None:
        if len(self.x) != len(self.y):
            raise DataFormatError(
                f"sample count {len(self.x)} != label count {len(self.y)}")
        if len(self.y) and self.n_classes and int(self.y.max()) >= self.n_classes:
            raise DataFormatError(
                f"label {int(self.y.max())} out of range for {self.n_classes} classes")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return tuple(self.x.shape[1:])


def _read_be32(buf: bytes, off: int, path: str) -> int:
    if off + 4 > len(buf):
        raise DataFormatError(f"{path}: truncated header")
    return struct.unpack_from(">I", buf, off)[0]


def _load_idx_array(path: str, magic: int, rank: int) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    got = _read_be32(buf, 0, path)
    if got != magic:
        raise DataFormatError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = [_read_be32(buf, 4 + 4 * i, path) for i in range(rank)]
    off = 4 + 4 * rank
    count = int(np.prod(dims, dtype=np.int64)) if dims else 0
    if len(buf) - off != count:
        raise DataFormatError(
            f"{path}: payload holds {len(buf) - off} bytes, header promises {count}")
    return np.frombuffer(buf, dtype=np.uint8, offset=off).reshape(dims)


def load_idx(images_path: str, labels_path: str) -> LabeledDataset:
    """Load an IDX image/label file pair; pixels are scaled to [0, 1]."""
    images = _load_idx_array(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _load_idx_array(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"{images_path} has {images.shape[0]} images but "
            f"{labels_path} has {labels.shape[0]} labels")
    n, h, w = images.shape
    x = images.astype(np.float64).reshape(n, 1, h, w) / 255.0
    y = labels.astype(np.int64)
    n_classes = int(y.max()) + 1 if n else 0
    return LabeledDataset(x=x, y=y, n_classes=n_classes)


def write_idx_images(path: str, images: np.ndarray) -> None:
    """Write [N, H, W] (or [N, 1, H, W]) values in [0, 1] as big-endian IDX."""
    arr = np.asarray(images)
    if arr.ndim == 4 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 3:
        raise DataFormatError(f"expected [N, H, W] images, got shape {arr.shape}")
    pixels = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *pixels.shape))
        f.write(pixels.tobytes())


def write_idx_labels(path: str, labels: np.ndarray) -> None:
    lab = np.asarray(labels)
    if lab.ndim != 1 or (len(lab) and (lab.min() < 0 or lab.max() > 255)):
        raise DataFormatError("labels must be a vector of bytes")
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(lab)))
        f.write(lab.astype(np.uint8).tobytes())


def load_cifar_bin(path: str, variant: str = "cifar10") -> LabeledDataset:
    """Load CIFAR binary records: label byte(s) then 3072 CHW pixel bytes."""
    if variant not in ("cifar10", "cifar100"):
        raise ValueError(f"unknown CIFAR variant {variant!r}")
    record = CIFAR10_RECORD if variant == "cifar10" else CIFAR100_RECORD
    n_classes = 10 if variant == "cifar10" else 100
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) % record:
        raise DataFormatError(
            f"{path}: size {len(buf)} is not a multiple of the {record}-byte record")
    n = len(buf) // record
    raw = np.frombuffer(buf, dtype=np.uint8).reshape(n, record)
    labels = raw[:, record - 3073].astype(np.int64)  # cifar100: fine label (2nd byte)
    if n and labels.max() >= n_classes:
        raise DataFormatError(
            f"{path}: label {int(labels.max())} out of range for {variant}")
    x = raw[:, record - 3072:].astype(np.float64).reshape(n, 3, 32, 32) / 255.0
    return LabeledDataset(x=x, y=labels, n_classes=n_classes)


def _blobs(n: int, rng: np.random.Generator, classes: int, dim: int,
           sep: float, noise: float) -> LabeledDataset:
    if classes > 2 * dim:
        raise ValueError(f"blobs supports at most {2 * dim} classes for dim={dim}")
    centers = np.zeros((classes, dim))
    for k in range(classes):
        centers[k, k % dim] = sep if k < dim else -sep
    y = rng.permutation(np.arange(n) % classes).astype(np.int64)
    x = centers[y] + noise * rng.standard_normal((n, dim))
    return LabeledDataset(x=x, y=y, n_classes=classes)


def _two_spirals(n: int, rng: np.random.Generator, noise: float,
                 turns: float) -> LabeledDataset:
    half = n // 2
    counts = [half, n - half]
    xs, ys = [], []
    for cls, m in enumerate(counts):
        t = rng.random(m)
        r = 0.5 + 4.5 * t
        theta = 2.0 * np.pi * turns * t + np.pi * cls
        pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
        pts += noise * rng.standard_normal((m, 2))
        xs.append(pts)
        ys.append(np.full(m, cls, dtype=np.int64))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    order = rng.permutation(n)
    return LabeledDataset(x=x[order], y=y[order], n_classes=2)


def _cell_codewords(classes: int, cells: int = 9, weight: int = 4,
                    min_dist: int = 4) -> list[tuple[int, ...]]:
    """Greedy constant-weight code: `classes` subsets of `cells` positions,
    each of size `weight`, pairwise symmetric difference >= min_dist."""
    from itertools import combinations
    chosen: list[tuple[int, ...]] = []
    for combo in combinations(range(cells), weight):
        sa = set(combo)
        if all(len(sa.symmetric_difference(c)) >= min_dist for c in chosen):
            chosen.append(combo)
        if len(chosen) == classes:
            return chosen
    raise ValueError(f"cannot place {classes} classes on {cells} cells")


def _glyph_prototypes(classes: int, size: int) -> np.ndarray:
    """Deterministic, mutually distant class patterns: each class lights a
    distinct set of filled blocks on a 3x3 macro-grid."""
    protos = np.zeros((classes, size, size))
    cell = max(size // 3 - 1, 2)
    gap = (size - 3 * cell) // 2
    for k, code in enumerate(_cell_codewords(classes)):
        for c in code:
            row, col = divmod(c, 3)
            y0 = gap + row * cell
            x0 = gap + col * cell
            protos[k, y0:y0 + cell, x0:x0 + cell] = 1.0
    return protos


def _shifted(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(img)
    h, w = img.shape
    ys = slice(max(dy, 0), min(h + dy, h))
    xs = slice(max(dx, 0), min(w + dx, w))
    src_ys = slice(max(-dy, 0), min(h - dy, h))
    src_xs = slice(max(-dx, 0), min(w - dx, w))
    out[ys, xs] = img[src_ys, src_xs]
    return out


def _glyph_images(n: int, rng: np.random.Generator, classes: int, size: int,
                  shift: int, noise: float) -> LabeledDataset:
    protos = _glyph_prototypes(classes, size)
    y = rng.permutation(np.arange(n) % classes).astype(np.int64)
    x = np.zeros((n, 1, size, size))
    offsets = rng.integers(-shift, shift + 1, size=(n, 2))
    contrast = rng.uniform(0.75, 1.0, size=n)
    jitter = noise * rng.standard_normal((n, size, size))
    for i in range(n):
        img = _shifted(protos[y[i]], offsets[i, 0], offsets[i, 1])
        x[i, 0] = np.clip(contrast[i] * img + jitter[i], 0.0, 1.0)
    return LabeledDataset(x=x, y=y, n_classes=classes)


# `noise` means a different scale per kind: blob cluster std, spiral point
# jitter, or glyph pixel noise
_NOISE_DEFAULTS = {"blobs": 1.0, "two_spirals": 0.2, "glyphs": 0.15}


def gen_synthetic(kind: str, n: int, seed: int, *, classes: int = 4, dim: int = 8,
                  sep: float = 6.0, noise: float | None = None, size: int = 16,
                  shift: int = 1) -> LabeledDataset:
    """Deterministic synthetic datasets: blobs | two_spirals | glyphs.

    Glyph class prototypes are fixed (seed-independent), so splits drawn
    with different seeds share the same classes while their samples differ.
    """
    if n <= 0:
        raise ValueError(f"sample count must be positive, got {n}")
    kind_tags = {"blobs": 0, "two_spirals": 1, "glyphs": 2}
    if kind not in kind_tags:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    if noise is None:
        noise = _NOISE_DEFAULTS[kind]
    rng = np.random.default_rng([seed, kind_tags[kind]])
    if kind == "blobs":
        return _blobs(n, rng, classes, dim, sep, noise)
    if kind == "two_spirals":
        return _two_spirals(n, rng, noise, turns=1.75)
    return _glyph_images(n, rng, classes, size, shift, noise)


@dataclass
class DatasetSpec:
    """Where the training/test data comes from, resolved by load_dataset."""

    kind: str = "synthetic"                # synthetic | idx | cifar10 | cifar100
    synthetic: str = "blobs"               # blobs | two_spirals | glyphs
    n_train: int = 512
    n_test: int = 128
    seed: int = 7
    classes: int = 4
    dim: int = 8
    sep: float = 6.0
    noise: float | None = None    # per-kind default when unset
    size: int = 16
    shift: int = 1
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    train_bin: str = ""
    test_bin: str = ""
    n_classes_override: int | None = None


def load_dataset(spec: DatasetSpec) -> tuple[LabeledDataset, LabeledDataset]:
    """Resolve a spec into (train, test); synthetic splits use distinct seeds."""
    if spec.kind == "synthetic":
        kw = dict(classes=spec.classes, dim=spec.dim, sep=spec.sep,
                  noise=spec.noise, size=spec.size, shift=spec.shift)
        train = gen_synthetic(spec.synthetic, spec.n_train, spec.seed, **kw)
        test = gen_synthetic(spec.synthetic, spec.n_test, spec.seed + 1, **kw)
    elif spec.kind == "idx":
        train = load_idx(spec.train_images, spec.train_labels)
        test = load_idx(spec.test_images, spec.test_labels)
    elif spec.kind in ("cifar10", "cifar100"):
        train = load_cifar_bin(spec.train_bin, spec.kind)
        test = load_cifar_bin(spec.test_bin, spec.kind)
    else:
        raise ValueError(f"unknown dataset kind {spec.kind!r}")
    n_classes = spec.n_classes_override or max(train.n_classes, test.n_classes)
    train.n_classes = test.n_classes = n_classes
    return train, test
