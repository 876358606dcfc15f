"""Dataset generation, the KDTD binary format, and normalized loading.

KDTD layout (all integers little-endian):
  magic "KDTD" | version u32 | count u32 | channels u8 | height u16 |
  width u16 | num_classes u16 | records...
Each record is a u16 label followed by channel-major u8 pixels.  Loading
normalizes every split with per-channel mean/std computed from the train
split only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"KDTD"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIBHHH")


class DatasetError(ValueError):
    pass


def write_kdtd(path, images: np.ndarray, labels: np.ndarray, num_classes: int) -> None:
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.ndim != 4 or images.dtype != np.uint8:
        raise DatasetError(f"images must be u8 [N,C,H,W], got {images.dtype} {images.shape}")
    n, c, h, w = images.shape
    if labels.shape != (n,):
        raise DatasetError(f"labels shape {labels.shape} does not match {n} images")
    if labels.min(initial=0) < 0 or (n and labels.max() >= num_classes):
        raise DatasetError("label out of range")
    rec_len = 2 + c * h * w
    buf = np.zeros((n, rec_len), dtype=np.uint8)
    lab = labels.astype(np.uint16)
    buf[:, 0] = lab & 0xFF
    buf[:, 1] = lab >> 8
    buf[:, 2:] = images.reshape(n, -1)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, n, c, h, w, num_classes))
        f.write(buf.tobytes())


def read_kdtd(path) -> tuple[np.ndarray, np.ndarray, int]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetError(f"{path}: truncated header, {len(raw)} bytes at offset 0")
    magic, version, n, c, h, w, num_classes = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DatasetError(f"{path}: bad magic {magic!r} at offset 0")
    if version != FORMAT_VERSION:
        raise DatasetError(f"{path}: unsupported version {version}")
    rec_len = 2 + c * h * w
    expected = _HEADER.size + n * rec_len
    if len(raw) < expected:
        missing_at = _HEADER.size + ((len(raw) - _HEADER.size) // rec_len) * rec_len
        raise DatasetError(
            f"{path}: truncated, expected {expected} bytes, got {len(raw)} "
            f"(record boundary breaks at offset {missing_at})"
        )
    if len(raw) > expected:
        raise DatasetError(f"{path}: {len(raw) - expected} trailing bytes after offset {expected}")
    buf = np.frombuffer(raw, dtype=np.uint8, offset=_HEADER.size).reshape(n, rec_len)
    labels = buf[:, 0].astype(np.int64) | (buf[:, 1].astype(np.int64) << 8)
    if n and labels.max() >= num_classes:
        bad = int(np.argmax(labels >= num_classes))
        raise DatasetError(
            f"{path}: label {labels[bad]} >= {num_classes} in record {bad} "
            f"(offset {_HEADER.size + bad * rec_len})"
        )
    images = buf[:, 2:].reshape(n, c, h, w).copy()
    return images, labels, num_classes


# ---------------------------------------------------------------------------
# synthetic generators


def _quantize(x: np.ndarray) -> np.ndarray:
    lo, hi = float(x.min()), float(x.max())
    scale = 255.0 / (hi - lo) if hi > lo else 1.0
    return np.clip(np.rint((x - lo) * scale), 0, 255).astype(np.uint8)


def _balanced_labels(rng, n: int, num_classes: int) -> np.ndarray:
    labels = np.arange(n, dtype=np.int64) % num_classes
    rng.shuffle(labels)
    return labels


def gaussian_classes(
    rng: np.random.Generator,
    num_classes: int = 4,
    n_train: int = 1200,
    n_test: int = 400,
    channels: int = 3,
    size: int = 16,
    separation: float = 3.0,
):
    """Class prototypes are unit-Gaussian images; a sample is
    separation * prototype + unit noise. separation 3 makes the task nearly
    linearly separable; small values make it genuinely hard."""
    protos = rng.normal(size=(num_classes, channels, size, size))
    y_train = _balanced_labels(rng, n_train, num_classes)
    y_test = _balanced_labels(rng, n_test, num_classes)
    x_train = separation * protos[y_train] + rng.normal(size=(n_train, channels, size, size))
    x_test = separation * protos[y_test] + rng.normal(size=(n_test, channels, size, size))
    both = np.concatenate([x_train, x_test])
    q = _quantize(both)
    return q[:n_train], y_train, q[n_train:], y_test


def textured_patches(
    rng: np.random.Generator,
    num_classes: int = 4,
    n_train: int = 1200,
    n_test: int = 400,
    channels: int = 3,
    size: int = 16,
    noise: float = 0.6,
):
    """Oriented sinusoidal gratings, one frequency/orientation per class,
    random phase per sample. Needs spatial filters to separate, so convs
    beat linear models here."""
    u, v = np.meshgrid(np.arange(size) / size, np.arange(size) / size, indexing="ij")
    angles = np.pi * np.arange(num_classes) / num_classes
    freqs = 2.0 + (np.arange(num_classes) % 3)

    def make(n, labels):
        phases = rng.uniform(0, 2 * np.pi, size=(n, channels))
        x = np.empty((n, channels, size, size))
        for i, k in enumerate(labels):
            wave = freqs[k] * 2 * np.pi * (u * np.cos(angles[k]) + v * np.sin(angles[k]))
            for ch in range(channels):
                x[i, ch] = np.sin(wave + phases[i, ch])
        return x + noise * rng.normal(size=x.shape)

    y_train = _balanced_labels(rng, n_train, num_classes)
    y_test = _balanced_labels(rng, n_test, num_classes)
    both = np.concatenate([make(n_train, y_train), make(n_test, y_test)])
    q = _quantize(both)
    return q[:n_train], y_train, q[n_train:], y_test


def convert_external_binary(
    path, image_size: int = 32, channels: int = 3, label_byte: str = "fine"
):
    """Parse the common two-label-bytes + channel-major-pixels record layout
    (coarse label byte, fine label byte, then channels*size*size pixels)."""
    raw = Path(path).read_bytes()
    rec_len = 2 + channels * image_size * image_size
    if len(raw) == 0 or len(raw) % rec_len != 0:
        raise DatasetError(
            f"{path}: size {len(raw)} is not a positive multiple of record length "
            f"{rec_len} (record boundary breaks at offset {(len(raw) // rec_len) * rec_len})"
        )
    buf = np.frombuffer(raw, dtype=np.uint8).reshape(-1, rec_len)
    col = {"coarse": 0, "fine": 1}[label_byte]
    labels = buf[:, col].astype(np.int64)
    images = buf[:, 2:].reshape(-1, channels, image_size, image_size).copy()
    return images, labels


def split_train_val(rng: np.random.Generator, x: np.ndarray, y: np.ndarray, val_fraction: float = 0.1):
    """Hold out round(val_fraction * N) examples; deterministic in the rng."""
    n = len(y)
    n_val = int(round(val_fraction * n))
    perm = rng.permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    return (x[train_idx], y[train_idx]), (x[val_idx], y[val_idx])


# ---------------------------------------------------------------------------
# loading and batching


@dataclass
class DataBundle:
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    num_classes: int
    mean: np.ndarray
    std: np.ndarray
    augment: bool = False

    @property
    def image_shape(self):
        return self.train_x.shape[1:]


def load_bundle(data_dir, augment: bool = False) -> DataBundle:
    data_dir = Path(data_dir)
    splits = {}
    num_classes = None
    for name in ("train", "val", "test"):
        images, labels, nc = read_kdtd(data_dir / f"{name}.kdtd")
        if num_classes is None:
            num_classes = nc
        elif nc != num_classes:
            raise DatasetError(f"{name} split declares {nc} classes, train has {num_classes}")
        splits[name] = (images, labels)
    train_imgs = splits["train"][0].astype(np.float64)
    mean = train_imgs.mean(axis=(0, 2, 3))
    std = np.maximum(train_imgs.std(axis=(0, 2, 3)), 1e-8)

    def norm(imgs):
        return (imgs.astype(np.float64) - mean[:, None, None]) / std[:, None, None]

    return DataBundle(
        train_x=norm(splits["train"][0]),
        train_y=splits["train"][1],
        val_x=norm(splits["val"][0]),
        val_y=splits["val"][1],
        test_x=norm(splits["test"][0]),
        test_y=splits["test"][1],
        num_classes=num_classes,
        mean=mean,
        std=std,
        augment=augment,
    )


def augment_batch(rng: np.random.Generator, x: np.ndarray, pad: int = 2) -> np.ndarray:
    """Random crop after zero padding, plus per-image horizontal flip."""
    b, _, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    offsets = rng.integers(0, 2 * pad + 1, size=(b, 2))
    flips = rng.random(b) < 0.5
    out = np.empty_like(x)
    for i in range(b):
        oy, ox = offsets[i]
        crop = padded[i, :, oy : oy + h, ox : ox + w]
        out[i] = crop[:, :, ::-1] if flips[i] else crop
    return out


def batch_indices(rng: np.random.Generator, n: int, batch_size: int):
    """Shuffled index batches covering all n examples (last may be short)."""
    perm = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield perm[i : i + batch_size]
