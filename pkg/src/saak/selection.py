"""Cross-entropy ranking of Saak coefficients and sparse feature selection."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _backend
from .errors import ConfigError, DataFormatError, DataIOError, DomainError

DEFAULT_BINS = 10
EPS = 1e-8
MASK_HEADER = "saak-mask 1"


@dataclass(frozen=True)
class EntropyMap:
    values: np.ndarray  # D1 x D2 x K, float64
    bins: int
    class_count: int

    @property
    def shape(self):
        return self.values.shape

    def channel_means(self) -> np.ndarray:
        return self.values.mean(axis=(0, 1))


def entropy_map(features, labels, class_count: int, bins: int = DEFAULT_BINS) -> EntropyMap:
    """Histogram-majority cross-entropy at every (i, j, k).

    At each location the N responses are split into ``bins`` equal-width
    bins over [min, max]; each non-empty bin votes for its majority class;
    class c gets p_c = (bins won) / bins, and the location scores
    sum_n log(1 / max(p_{label_n}, EPS)).  Constant locations score
    N log(1/EPS).
    """
    x = np.asarray(features)
    y = np.asarray(labels, dtype=np.int64)
    if class_count < 2:
        raise DomainError("entropy_map needs at least 2 classes")
    if x.ndim != 4:
        raise DomainError(f"features must be rank 4, got shape {x.shape}")
    n = x.shape[0]
    if y.shape != (n,):
        raise DomainError(f"{n} samples but {y.shape} labels")
    if n < class_count:
        raise DomainError(f"need N >= C, got N={n}, C={class_count}")
    if y.min() < 0 or y.max() >= class_count:
        raise DomainError(f"labels must lie in [0, {class_count})")
    if bins < 1:
        raise ConfigError("bins must be >= 1")
    cols = np.ascontiguousarray(x.reshape(n, -1), dtype=np.float32)
    wins, constant = _backend.kernels.bin_majority_wins(cols, y, class_count, bins)
    return EntropyMap(_entropy_from_wins(wins, constant, y, class_count, bins).reshape(x.shape[1:]), bins, class_count)


def _entropy_from_wins(wins, constant, labels, class_count, bins) -> np.ndarray:
    # class sizes are identical at every location, so H only depends on how
    # many bins each class wins: look the per-class cost up and weight by size
    sizes = np.bincount(labels, minlength=class_count).astype(np.float64)
    cost = np.array([math.log(1.0 / max(w / bins, EPS)) for w in range(bins + 1)])
    h = (sizes[None, :] * cost[wins]).sum(axis=1)
    h[constant.astype(bool)] = labels.shape[0] * math.log(1.0 / EPS)
    return h


def _resolve_count(budget, total: int, what: str) -> int:
    if isinstance(budget, float):
        if not 0.0 < budget <= 1.0:
            raise ConfigError(f"{what} fraction must be in (0, 1], got {budget}")
        return max(1, math.ceil(budget * total - 1e-9))
    count = int(budget)
    if not 1 <= count <= total:
        raise ConfigError(f"{what} count must be in [1, {total}], got {count}")
    return count


def rank_spectral(emap: EntropyMap, keep) -> list[int]:
    """Channels with the lowest spatially averaged entropy (ties: lower index),
    returned in ascending channel order.  ``keep`` is a count or a fraction."""
    means = emap.channel_means()
    k = _resolve_count(keep, means.shape[0], "spectral")
    order = np.argsort(means, kind="stable")
    return sorted(int(c) for c in order[:k])


def rank_spatial(emap: EntropyMap, keep, channels=None) -> dict[int, list[int]]:
    """Per channel, row-major flat indices of the lowest-entropy positions
    (ties in row-major order), sorted ascending."""
    d1, d2, n_ch = emap.values.shape
    k = _resolve_count(keep, d1 * d2, "spatial")
    channels = range(n_ch) if channels is None else channels
    out = {}
    for c in channels:
        flat = emap.values[:, :, c].ravel()
        out[int(c)] = sorted(int(p) for p in np.argsort(flat, kind="stable")[:k])
    return out


@dataclass(frozen=True)
class SelectionMask:
    grid: tuple[int, int, int]  # D1, D2, K
    spectral_keep: tuple[int, ...]
    spatial_keep: dict  # channel -> tuple of flat row-major positions

    def __post_init__(self):
        d1, d2, k = self.grid
        if list(self.spectral_keep) != sorted(set(self.spectral_keep)):
            raise DomainError("spectral_keep must be sorted and unique")
        if any(not 0 <= c < k for c in self.spectral_keep):
            raise DomainError("spectral_keep index outside the grid")
        if set(self.spatial_keep) != set(self.spectral_keep):
            raise DomainError("spatial_keep must cover exactly the retained channels")
        for c, pos in self.spatial_keep.items():
            if list(pos) != sorted(set(pos)) or any(not 0 <= p < d1 * d2 for p in pos):
                raise DomainError(f"channel {c}: spatial positions must be unique and in range")

    @property
    def feature_count(self) -> int:
        return sum(len(p) for p in self.spatial_keep.values())

    def positions(self, channel: int) -> list[tuple[int, int]]:
        d2 = self.grid[1]
        return [divmod(p, d2) for p in self.spatial_keep[channel]]

    def flat_index(self) -> np.ndarray:
        """Indices into a (D1*D2*K) row-major vector, in packed order
        (channel ascending, then row-major position)."""
        k = self.grid[2]
        return np.array(
            [p * k + c for c in self.spectral_keep for p in self.spatial_keep[c]], dtype=np.int64
        )


def select(emap: EntropyMap, spectral=0.75, spatial=0.5) -> SelectionMask:
    channels = rank_spectral(emap, spectral)
    positions = rank_spatial(emap, spatial, channels)
    return SelectionMask(
        tuple(emap.values.shape), tuple(channels), {c: tuple(p) for c, p in positions.items()}
    )


def full_mask(grid) -> SelectionMask:
    d1, d2, k = grid
    every = tuple(range(d1 * d2))
    return SelectionMask(tuple(grid), tuple(range(k)), {c: every for c in range(k)})


def apply_selection(features, mask: SelectionMask, mode: str = "packed") -> np.ndarray:
    """``zeroed``: same shape, unselected entries set to 0.  ``packed``:
    N x F matrix of the selected values, channel-ascending then row-major."""
    x = np.asarray(features, dtype=np.float32)
    if x.ndim != 4 or tuple(x.shape[1:]) != tuple(mask.grid):
        raise DomainError(f"features {x.shape} do not match mask grid {mask.grid}")
    idx = mask.flat_index()
    flat = x.reshape(x.shape[0], -1)
    if mode == "packed":
        return np.ascontiguousarray(flat[:, idx])
    if mode == "zeroed":
        out = np.zeros_like(flat)
        out[:, idx] = flat[:, idx]
        return out.reshape(x.shape)
    raise ConfigError(f"unknown selection mode {mode!r}")


def save_mask(path, mask: SelectionMask) -> None:
    lines = [MASK_HEADER, "grid " + " ".join(str(d) for d in mask.grid)]
    for c in mask.spectral_keep:
        lines.append(f"channel {c}: " + " ".join(f"{i},{j}" for i, j in mask.positions(c)))
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as e:
        raise DataIOError(f"{path}: {e}") from e


def load_mask(path) -> SelectionMask:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise DataIOError(f"{path}: {e}") from e
    if not lines or lines[0].strip() != MASK_HEADER:
        raise DataFormatError(f"{path}: missing '{MASK_HEADER}' header")
    try:
        tag, *dims = lines[1].split()
        if tag != "grid" or len(dims) != 3:
            raise ValueError("expected 'grid D1 D2 K'")
        grid = tuple(int(d) for d in dims)
        spatial = {}
        for line in lines[2:]:
            if not line.strip():
                continue
            head, _, body = line.partition(":")
            word, ch = head.split()
            if word != "channel":
                raise ValueError(f"unexpected line {line!r}")
            pos = []
            for item in body.split():
                i, j = item.split(",")
                pos.append(int(i) * grid[1] + int(j))
            spatial[int(ch)] = tuple(pos)
        return SelectionMask(grid, tuple(sorted(spatial)), spatial)
    except (ValueError, IndexError, DomainError) as e:
        raise DataFormatError(f"{path}: bad mask file ({e})") from e
