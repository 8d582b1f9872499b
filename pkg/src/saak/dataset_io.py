"""Readers for MNIST/CIFAR-10/STL-10, the SAAK tensor container, sidecar
metadata files and grayscale heatmap export."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import ConsistencyError, DataFormatError, DataIOError, DomainError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

CIFAR_SIDE = 32
CIFAR_ROW = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE
STL_SIDE = 96

TENSOR_MAGIC = b"SAAK"
TENSOR_VERSION = 1
DTYPE_F32LE = 1
_TENSOR_HEAD = struct.Struct("<4sHBB")

META_HEADER = "saak-meta"
META_VERSION = 1


@dataclass
class ImageSet:
    """N labeled images, float32 in [0, 1], layout N x H x W x K0."""

    data: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.data.ndim != 4:
            raise ConsistencyError(f"image data must be rank 4, got shape {self.data.shape}")
        if self.labels.shape != (self.data.shape[0],):
            raise ConsistencyError(
                f"{self.data.shape[0]} images but {self.labels.shape[0]} labels"
            )
        if self.class_count < 1:
            raise ConsistencyError("class_count must be positive")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ConsistencyError(f"labels must lie in [0, {self.class_count})")
        if not np.all(np.isfinite(self.data)):
            raise ConsistencyError("image data contains non-finite values")

    def __len__(self):
        return self.data.shape[0]

    @property
    def shape(self):
        return self.data.shape

    def subset(self, index) -> "ImageSet":
        index = np.asarray(index)
        return ImageSet(self.data[index], self.labels[index], self.class_count)


def _read_bytes(path) -> bytes:
    path = Path(path)
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as f:
                return f.read()
        return path.read_bytes()
    except FileNotFoundError as e:
        raise DataIOError(f"{path}: no such file") from e
    except (OSError, EOFError) as e:
        raise DataIOError(f"{path}: {e}") from e


def _scale_bytes(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float32) / np.float32(255.0)


def read_idx(path, expected_magic: int) -> np.ndarray:
    """Parse an IDX file of unsigned bytes; returns a uint8 array."""
    buf = _read_bytes(path)
    if len(buf) < 4:
        raise DataIOError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != expected_magic:
        raise DataFormatError(
            f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(buf) < head:
        raise DataIOError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", buf[4:head])
    expected = int(np.prod(dims, dtype=np.int64))
    payload = len(buf) - head
    if payload < expected:
        raise DataIOError(f"{path}: header declares {expected} bytes, payload has {payload}")
    if payload > expected:
        raise DataFormatError(f"{path}: {payload - expected} trailing bytes after IDX payload")
    return np.frombuffer(buf, dtype=np.uint8, offset=head).reshape(dims)


def load_mnist(image_path, label_path) -> ImageSet:
    images = read_idx(image_path, IDX_IMAGE_MAGIC)
    labels = read_idx(label_path, IDX_LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"{image_path}: {images.shape[0]} images vs {labels.shape[0]} labels in {label_path}"
        )
    if labels.size and labels.max() >= 10:
        raise DataFormatError(f"{label_path}: label {labels.max()} out of range")
    return ImageSet(_scale_bytes(images)[..., None], labels, 10)


def _planar_rows(path, side: int) -> tuple[np.ndarray, np.ndarray]:
    buf = _read_bytes(path)
    row = 1 + 3 * side * side
    if len(buf) == 0 or len(buf) % row:
        raise DataFormatError(f"{path}: size {len(buf)} is not a multiple of {row}")
    rows = np.frombuffer(buf, dtype=np.uint8).reshape(-1, row)
    labels = rows[:, 0]
    planes = rows[:, 1:].reshape(-1, 3, side, side)
    return planes, labels


def load_cifar10(batch_paths: Iterable) -> ImageSet:
    """Concatenate CIFAR-10 binary batches (label byte + R,G,B planes per row)."""
    datas, labels = [], []
    for p in batch_paths:
        planes, lab = _planar_rows(p, CIFAR_SIDE)
        if lab.size and lab.max() >= 10:
            raise DataFormatError(f"{p}: label byte {lab.max()} >= 10")
        datas.append(planes.transpose(0, 2, 3, 1))
        labels.append(lab)
    if not datas:
        raise DomainError("no CIFAR-10 batch files given")
    return ImageSet(_scale_bytes(np.concatenate(datas)), np.concatenate(labels), 10)


def load_stl10(image_path, label_path) -> ImageSet:
    """STL-10 binary: 3 x 96 x 96 bytes per image, each plane column-major;
    labels are 1-indexed bytes in a separate file."""
    buf = _read_bytes(image_path)
    size = 3 * STL_SIDE * STL_SIDE
    if len(buf) == 0 or len(buf) % size:
        raise DataFormatError(f"{image_path}: size {len(buf)} is not a multiple of {size}")
    planes = np.frombuffer(buf, dtype=np.uint8).reshape(-1, 3, STL_SIDE, STL_SIDE)
    images = planes.transpose(0, 3, 2, 1)
    lab = np.frombuffer(_read_bytes(label_path), dtype=np.uint8).astype(np.int64)
    if lab.shape[0] != images.shape[0]:
        raise ConsistencyError(
            f"{image_path}: {images.shape[0]} images vs {lab.shape[0]} labels in {label_path}"
        )
    if lab.size and (lab.min() < 1 or lab.max() > 10):
        raise DataFormatError(f"{label_path}: labels must be in 1..10")
    return ImageSet(_scale_bytes(images), lab - 1, 10)


# ---------------------------------------------------------------------------
# tensor container


def save_tensor(path, tensor) -> None:
    arr = np.asarray(tensor)
    if arr.dtype != np.float32:
        arr = arr.astype(np.float32)
    if arr.ndim > 255:
        raise DomainError("tensor rank exceeds 255")
    if any(d > 0xFFFFFFFF for d in arr.shape):
        raise DomainError("tensor dimension exceeds u32")
    head = _TENSOR_HEAD.pack(TENSOR_MAGIC, TENSOR_VERSION, DTYPE_F32LE, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    path = Path(path)
    try:
        with open(path, "wb") as f:
            f.write(head + dims + payload)
    except OSError as e:
        raise DataIOError(f"{path}: {e}") from e


def load_tensor(path) -> np.ndarray:
    buf = _read_bytes(path)
    if len(buf) < _TENSOR_HEAD.size:
        raise DataIOError(f"{path}: truncated tensor header")
    magic, version, dtype, ndim = _TENSOR_HEAD.unpack_from(buf)
    if magic != TENSOR_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != TENSOR_VERSION:
        raise DataFormatError(f"{path}: unsupported tensor version {version}")
    if dtype != DTYPE_F32LE:
        raise DataFormatError(f"{path}: unsupported dtype code {dtype}")
    head = _TENSOR_HEAD.size + 4 * ndim
    if len(buf) < head:
        raise DataIOError(f"{path}: truncated tensor header")
    dims = struct.unpack_from(f"<{ndim}I", buf, _TENSOR_HEAD.size)
    nbytes = 4 * int(np.prod(dims, dtype=np.int64))
    if len(buf) - head < nbytes:
        raise DataIOError(f"{path}: payload holds {len(buf) - head} bytes, dims need {nbytes}")
    if len(buf) - head > nbytes:
        raise DataFormatError(f"{path}: trailing bytes after tensor payload")
    arr = np.frombuffer(buf, dtype="<f4", offset=head, count=nbytes // 4)
    return arr.astype(np.float32).reshape(dims)


# ---------------------------------------------------------------------------
# sidecar metadata: "saak-meta 1" then one "key = value" per line


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        return " ".join(_format_value(v.item() if isinstance(v, np.generic) else v) for v in value)
    if isinstance(value, np.generic):
        return _format_value(value.item())
    return str(value)


def write_meta(path, kind: str, fields: Mapping) -> None:
    lines = [f"{META_HEADER} {META_VERSION}", f"kind = {kind}"]
    for key, value in fields.items():
        text = _format_value(value)
        if "\n" in text:
            raise DomainError(f"metadata value for {key!r} spans lines")
        lines.append(f"{key} = {text}")
    path = Path(path)
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as e:
        raise DataIOError(f"{path}: {e}") from e


def read_meta(path, kind: str | None = None) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise DataIOError(f"{path}: {e}") from e
    lines = text.splitlines()
    if not lines or lines[0].split() != [META_HEADER, str(META_VERSION)]:
        raise DataFormatError(f"{path}: missing '{META_HEADER} {META_VERSION}' header")
    out = {}
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataFormatError(f"{path}:{n}: expected 'key = value'")
        out[key.strip()] = value.strip()
    if kind is not None and out.get("kind") != kind:
        raise DataFormatError(f"{path}: expected kind {kind!r}, found {out.get('kind')!r}")
    return out


def parse_floats(text: str) -> np.ndarray:
    return np.array([float(t) for t in text.split()], dtype=np.float64)


def parse_ints(text: str) -> list[int]:
    return [int(t) for t in text.split()]


# ---------------------------------------------------------------------------
# heatmaps


def heatmap_pixels(channel) -> np.ndarray:
    """Min-max scale to 0..255 with round-half-up; a constant map is all zeros."""
    a = np.asarray(channel, dtype=np.float64)
    if a.ndim != 2:
        raise DomainError(f"heatmap needs a rank-2 array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("heatmap input contains non-finite values")
    lo, hi = a.min(), a.max()
    if hi == lo:
        return np.zeros(a.shape, dtype=np.uint8)
    scaled = (a - lo) / (hi - lo) * 255.0
    return np.floor(scaled + 0.5).clip(0, 255).astype(np.uint8)


def export_heatmap(channel, path) -> None:
    from PIL import Image

    pixels = heatmap_pixels(channel)
    path = Path(path)
    try:
        Image.fromarray(pixels).save(path, format="PNG")
    except OSError as e:
        raise DataIOError(f"{path}: {e}") from e
