"""Forward/inverse Saak stages and multi-stage cascades."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import _backend
from .dataset_io import ImageSet
from .errors import ConfigError, DomainError, UnsupportedConfigError
from .kernels import SaakKernelSet, StageConfig, fit_stage_kernels

POOL_WINDOW = 2
POOL_STRIDE = 2
# float32 elements per patch matrix block during forward passes
_BLOCK_ELEMS = 1 << 23


def _as_tensor(t) -> np.ndarray:
    data = t.data if isinstance(t, ImageSet) else t
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim != 4:
        raise DomainError(f"feature tensors are rank 4 (N x D1 x D2 x K), got shape {arr.shape}")
    return arr


def window_count(d: int, ks: int, stride: int) -> int:
    return (d - ks) // stride + 1


def extract_patches(t, ks: int, stride: int) -> np.ndarray:
    """Valid (unpadded) windows as rows; each row is window row-major with
    the channel index innermost."""
    x = _as_tensor(t)
    if ks < 1 or stride < 1:
        raise DomainError("kernel size and stride must be positive")
    if x.shape[1] < ks or x.shape[2] < ks:
        raise DomainError(f"spatial dims {x.shape[1:3]} smaller than kernel size {ks}")
    return _backend.kernels.extract_patches(x, ks, stride)


def max_pool(t, window: int = POOL_WINDOW, stride: int = POOL_STRIDE) -> np.ndarray:
    x = _as_tensor(t)
    if x.shape[1] < window or x.shape[2] < window:
        raise DomainError(f"spatial dims {x.shape[1:3]} smaller than pool window {window}")
    return _backend.kernels.max_pool(x, window, stride)


def stage_output_hw(h: int, w: int, ks: int, stride: int, pool: bool) -> tuple[int, int]:
    d1, d2 = window_count(h, ks, stride), window_count(w, ks, stride)
    if pool:
        d1, d2 = window_count(d1, POOL_WINDOW, POOL_STRIDE), window_count(d2, POOL_WINDOW, POOL_STRIDE)
    return d1, d2


def _check_stage_fits(h: int, w: int, ks: int, pool: bool, stage: int) -> None:
    if h < ks or w < ks:
        raise ConfigError(f"stage {stage}: input {h}x{w} is smaller than kernel size {ks}")
    if pool and (h - ks + 1 < POOL_WINDOW or w - ks + 1 < POOL_WINDOW):
        raise ConfigError(f"stage {stage}: output too small to max-pool")


def _project(patches: np.ndarray, k: SaakKernelSet) -> np.ndarray:
    dc = k.dc.astype(np.float32)
    p0 = patches @ dc
    ac = patches - p0[:, None] * dc[None, :]
    proj = np.ascontiguousarray(ac @ k.ac_basis.T.astype(np.float32), dtype=np.float32)
    return _backend.kernels.augment_relu(np.ascontiguousarray(p0, dtype=np.float32), proj)


def forward_stage(t, k: SaakKernelSet, cfg: StageConfig | None = None) -> np.ndarray:
    """Project every window on DC and the retained AC kernels, split each AC
    response into (positive part, negative part), then optionally max-pool."""
    x = _as_tensor(t)
    ks = cfg.kernel_size if cfg else k.kernel_size
    stride = cfg.stride if cfg else k.stride
    pool = cfg.pool if cfg else k.pool
    if ks * ks * x.shape[3] != k.input_dim:
        raise DomainError(
            f"kernel input_dim {k.input_dim} != {ks}x{ks}x{x.shape[3]} window of the input"
        )
    n, h, w, _ = x.shape
    if h < ks or w < ks:
        raise DomainError(f"spatial dims {h}x{w} smaller than kernel size {ks}")
    d1, d2 = window_count(h, ks, stride), window_count(w, ks, stride)
    per_image = d1 * d2 * max(k.input_dim, k.augmented_count)
    chunk = max(1, _BLOCK_ELEMS // per_image)
    out = None
    for s in range(0, n, chunk):
        block = x[s : s + chunk]
        g = _project(extract_patches(block, ks, stride), k)
        g = g.reshape(block.shape[0], d1, d2, k.augmented_count)
        if pool:
            g = max_pool(g)
        if out is None:
            out = np.empty((n,) + g.shape[1:], dtype=np.float32)
        out[s : s + block.shape[0]] = g
    if out is None:
        raise DomainError("forward_stage on an empty tensor")
    return out


@dataclass(frozen=True)
class SaakCascade:
    stages: tuple[tuple[StageConfig, SaakKernelSet], ...]

    def __post_init__(self):
        for i in range(1, len(self.stages)):
            prev, cur = self.stages[i - 1][1], self.stages[i][1]
            need = cur.kernel_size ** 2 * prev.augmented_count
            if cur.input_dim != need:
                raise ConfigError(
                    f"stage {i + 1}: input_dim {cur.input_dim} != {need} from stage {i} output"
                )

    def __len__(self):
        return len(self.stages)

    @property
    def kernels(self) -> list[SaakKernelSet]:
        return [k for _, k in self.stages]

    @property
    def configs(self) -> list[StageConfig]:
        return [c for c, _ in self.stages]

    def output_shapes(self, h: int, w: int) -> list[tuple[int, int, int]]:
        return cascade_shapes(h, w, self.configs, [k.augmented_count for k in self.kernels])


def cascade_shapes(
    h: int, w: int, configs: Sequence[StageConfig], channels: Sequence[int] | None = None
) -> list[tuple[int, int, int]]:
    """Spatial dims (and channel count when known, else 0) after each stage;
    raises ConfigError naming the first stage that does not fit."""
    shapes = []
    for i, cfg in enumerate(configs, start=1):
        _check_stage_fits(h, w, cfg.kernel_size, cfg.pool, i)
        h, w = stage_output_hw(h, w, cfg.kernel_size, cfg.stride, cfg.pool)
        shapes.append((h, w, channels[i - 1] if channels else 0))
    return shapes


def auto_stage_count(h: int, w: int, ks: int, stride: int, pool: bool, limit: int = 16) -> int:
    """How many identical stages an h x w input supports.  Non-overlapping
    stages stop once the side is no longer a multiple of the kernel size
    (the quad-tree split no longer tiles); overlapping ones stop when the
    next window would not fit."""
    count = 0
    while count < limit:
        if h < ks or w < ks:
            break
        if stride == ks and (h % ks or w % ks):
            break
        if pool and (h - ks + 1 < POOL_WINDOW or w - ks + 1 < POOL_WINDOW):
            break
        h, w = stage_output_hw(h, w, ks, stride, pool)
        count += 1
    return count


def forward_cascade(images, cascade: SaakCascade) -> list[np.ndarray]:
    """All stage outputs, first to last."""
    x = _as_tensor(images)
    cascade.output_shapes(x.shape[1], x.shape[2])
    outs = []
    for cfg, k in cascade.stages:
        x = forward_stage(x, k, cfg)
        outs.append(x)
    return outs


def iter_stage_inputs(images, stages, chunk: int) -> Iterator[np.ndarray]:
    """Yield chunks of the input to the stage after ``stages``, recomputing
    earlier stages per chunk so memory stays bounded by ``chunk`` images."""
    x = _as_tensor(images)
    for s in range(0, x.shape[0], chunk):
        block = x[s : s + chunk]
        for cfg, k in stages:
            block = forward_stage(block, k, cfg)
        yield block


def fit_cascade(images, configs: Sequence[StageConfig], chunk: int = 1000) -> SaakCascade:
    """Fit stages in order, each on the previous stages' outputs for all images."""
    x = _as_tensor(images)
    cascade_shapes(x.shape[1], x.shape[2], configs)
    stages: list[tuple[StageConfig, SaakKernelSet]] = []
    for i, cfg in enumerate(configs, start=1):
        try:
            k = fit_stage_kernels(iter_stage_inputs(x, stages, chunk), cfg)
        except ConfigError as e:
            raise ConfigError(f"stage {i}: {e}") from e
        stages.append((cfg, k))
    return SaakCascade(tuple(stages))


def inverse_stage(t, k: SaakKernelSet) -> np.ndarray:
    """Undo a lossless (non-overlapping, unpooled, keep-all) stage."""
    if not k.lossless:
        raise UnsupportedConfigError(
            "inverse needs stride == kernel_size, no pooling and keep-all truncation "
            f"(got stride {k.stride}, k_s {k.kernel_size}, pool {k.pool}, "
            f"{k.retained}/{k.input_dim} kernels)"
        )
    g = _as_tensor(t)
    if g.shape[3] != k.augmented_count:
        raise DomainError(f"expected {k.augmented_count} channels, got {g.shape[3]}")
    n, d1, d2, _ = g.shape
    coef = np.empty((n, d1, d2, k.retained), dtype=np.float64)
    coef[..., 0] = g[..., 0]
    coef[..., 1:] = g[..., 1::2].astype(np.float64) - g[..., 2::2]
    f = coef @ k.basis().astype(np.float64)
    ks, kin = k.kernel_size, k.in_channels
    f = f.reshape(n, d1, d2, ks, ks, kin).transpose(0, 1, 3, 2, 4, 5)
    return f.reshape(n, d1 * ks, d2 * ks, kin).astype(np.float32)


def inverse_cascade(t, cascade: SaakCascade) -> np.ndarray:
    x = t
    for _, k in reversed(cascade.stages):
        x = inverse_stage(x, k)
    return x


@dataclass(frozen=True)
class RmseCurve:
    values: np.ndarray
    degenerate: np.ndarray
    normalized: bool


def rmse_per_spectral(clean, attacked, normalize: bool = False) -> RmseCurve:
    """Per-channel RMSE over images and positions; the normalized variant
    divides by the clean channel's RMS (zero-energy channels report 0 and
    are flagged degenerate)."""
    a = np.asarray(clean, dtype=np.float64)
    b = np.asarray(attacked, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 4:
        raise DomainError(f"rmse needs two rank-4 tensors of equal shape, got {a.shape}, {b.shape}")
    err = np.sqrt(((a - b) ** 2).mean(axis=(0, 1, 2)))
    degenerate = np.zeros(a.shape[3], dtype=bool)
    if normalize:
        ref = np.sqrt((a**2).mean(axis=(0, 1, 2)))
        degenerate = ref == 0
        err = np.divide(err, ref, out=np.zeros_like(err), where=~degenerate)
    return RmseCurve(err, degenerate, normalize)
