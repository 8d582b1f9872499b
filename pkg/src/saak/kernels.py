"""Fitting one stage of Saak kernels: DC vector, AC correlation, KLT basis,
truncation and stability comparison between kernel sets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import dataset_io
from .errors import ConfigError, DataFormatError, DomainError, NumericError

KERNEL_SIZES = (2, 3, 5)
DEFAULT_ENERGY = 0.995
MIN_AC_COMPONENTS = 3


@dataclass(frozen=True)
class StageConfig:
    """One stage: window size, stride (1 or kernel_size), optional 2x2 max-pool,
    and truncation rule.

    ``truncation`` is ``"all"``, ``"energy"`` (keep the smallest prefix of the
    spectrum holding ``energy`` of the AC energy, never fewer than
    ``min_components``) or ``"top"`` (keep ``top_k`` kernels counting DC).
    """

    kernel_size: int = 2
    stride: int = 1
    pool: bool = False
    truncation: str = "energy"
    energy: float = DEFAULT_ENERGY
    top_k: int | None = None
    min_components: int = MIN_AC_COMPONENTS

    def __post_init__(self):
        if self.kernel_size not in KERNEL_SIZES:
            raise ConfigError(f"kernel_size must be one of {KERNEL_SIZES}, got {self.kernel_size}")
        if self.stride not in (1, self.kernel_size):
            raise ConfigError(f"stride must be 1 or {self.kernel_size}, got {self.stride}")
        if self.truncation not in ("all", "energy", "top"):
            raise ConfigError(f"unknown truncation {self.truncation!r}")
        if self.truncation == "energy" and not 0.0 < self.energy <= 1.0:
            raise ConfigError(f"energy fraction must be in (0, 1], got {self.energy}")
        if self.truncation == "top" and (self.top_k is None or self.top_k < 1):
            raise ConfigError("top truncation needs top_k >= 1")
        if self.min_components < 0:
            raise ConfigError("min_components must be >= 0")

    @property
    def overlapping(self) -> bool:
        return self.stride == 1 and self.kernel_size > 1

    @property
    def truncation_spec(self) -> str:
        if self.truncation == "energy":
            return f"energy:{self.energy!r}"
        if self.truncation == "top":
            return f"top:{self.top_k}"
        return "all"

    @classmethod
    def parse_truncation(cls, text: str) -> dict:
        """'all' | 'energy:0.995' | 'top:12' -> StageConfig keyword arguments."""
        name, _, value = text.strip().partition(":")
        try:
            if name == "all" and not value:
                return {"truncation": "all"}
            if name == "energy":
                return {"truncation": "energy", "energy": float(value) if value else DEFAULT_ENERGY}
            if name == "top":
                return {"truncation": "top", "top_k": int(value)}
        except ValueError:
            pass
        raise ConfigError(f"bad truncation spec {text!r}")


@dataclass(frozen=True)
class SaakKernelSet:
    """DC vector plus retained AC basis (rows) of one stage."""

    dc: np.ndarray
    ac_basis: np.ndarray
    eigenvalues: np.ndarray
    spectrum: np.ndarray = field(repr=False)
    kernel_size: int = 2
    stride: int = 1
    pool: bool = False
    truncation: str = "all"
    n_patches: int = 0

    @property
    def input_dim(self) -> int:
        return self.dc.shape[0]

    @property
    def in_channels(self) -> int:
        return self.input_dim // (self.kernel_size * self.kernel_size)

    @property
    def retained(self) -> int:
        """Number of kernels kept, DC included (K)."""
        return self.ac_basis.shape[0] + 1

    @property
    def augmented_count(self) -> int:
        return 2 * self.retained - 1

    @property
    def lossless(self) -> bool:
        return (
            self.stride == self.kernel_size
            and not self.pool
            and self.retained == self.input_dim
        )

    def basis(self) -> np.ndarray:
        """All retained kernels as rows, DC first."""
        return np.vstack([self.dc[None, :], self.ac_basis])


def dc_vector(n: int) -> np.ndarray:
    if n < 1:
        raise DomainError("dc_vector needs n >= 1")
    return np.full(n, 1.0 / math.sqrt(n))


def remove_dc(patch) -> np.ndarray:
    """Subtract the projection on the DC direction (works row-wise on 2-D input)."""
    f = np.asarray(patch, dtype=np.float64)
    if f.ndim not in (1, 2) or f.shape[-1] < 1:
        raise DomainError(f"remove_dc needs vectors of length >= 1, got shape {f.shape}")
    return f - f.mean(axis=-1, keepdims=True)


class CorrelationAccumulator:
    """Running sum of f f^T over DC-removed rows, in float64, in call order."""

    def __init__(self, dim: int):
        self.dim = dim
        self.total = np.zeros((dim, dim), dtype=np.float64)
        self.count = 0

    def add(self, patches: np.ndarray, dc_removed: bool = False) -> None:
        patches = np.asarray(patches)
        if patches.ndim != 2 or patches.shape[1] != self.dim:
            raise DomainError(f"expected rows of length {self.dim}, got shape {patches.shape}")
        step = max(1, (1 << 22) // self.dim)
        for s in range(0, patches.shape[0], step):
            f = patches[s : s + step].astype(np.float64)
            if not dc_removed:
                f -= f.mean(axis=1, keepdims=True)
            self.total += f.T @ f
        self.count += patches.shape[0]

    def result(self) -> np.ndarray:
        if self.count == 0:
            raise DomainError("correlation of zero patches")
        r = self.total / self.count
        return (r + r.T) / 2


def correlation_matrix(patches, block: int = 65536) -> np.ndarray:
    """R = mean of f f^T over rows of already DC-removed patches."""
    f = np.asarray(patches)
    if f.ndim != 2 or f.shape[0] == 0:
        raise DomainError("correlation_matrix needs a non-empty 2-D patch matrix")
    acc = CorrelationAccumulator(f.shape[1])
    for start in range(0, f.shape[0], block):
        acc.add(f[start : start + block], dc_removed=True)
    return acc.result()


def _orient(vectors: np.ndarray) -> np.ndarray:
    # largest-magnitude component positive; argmax picks the lowest index on ties
    idx = np.abs(vectors).argmax(axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1
    return vectors * signs


def symmetric_eig(r, tol: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (non-increasing) and eigenvectors (columns) of a symmetric
    matrix, with the sign convention applied to each vector."""
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise DomainError(f"symmetric_eig needs a square matrix, got shape {r.shape}")
    scale = max(1.0, float(np.abs(r).max(initial=0.0)))
    if np.abs(r - r.T).max(initial=0.0) > tol * scale:
        raise DomainError("symmetric_eig input is not symmetric")
    if not np.all(np.isfinite(r)):
        raise NumericError("symmetric_eig input contains non-finite values")
    try:
        values, vectors = np.linalg.eigh((r + r.T) / 2)
    except np.linalg.LinAlgError as e:
        raise NumericError(f"eigendecomposition did not converge: {e}") from e
    order = np.argsort(-values, kind="stable")
    return values[order], _orient(vectors[:, order])


def _ac_frame(n: int) -> np.ndarray:
    """Orthonormal basis (n x n-1) of the complement of the DC direction,
    taken from the Householder reflection that maps dc onto e_0."""
    a0 = dc_vector(n)
    u = a0.copy()
    u[0] -= 1.0
    norm2 = float(u @ u)
    h = np.eye(n)
    if norm2 > 0:
        h -= 2.0 * np.outer(u, u) / norm2
    return h[:, 1:]


def ac_spectrum(r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """KLT of the AC subspace: eigenpairs of R restricted to the complement of
    DC, so every basis vector is orthogonal to DC by construction."""
    n = r.shape[0]
    if n == 1:
        return np.zeros(0), np.zeros((0, 1))
    q = _ac_frame(n)
    values, vectors = symmetric_eig(q.T @ r @ q)
    basis = _orient(q @ vectors).T
    return np.clip(values, 0.0, None), basis


def retained_count(eigenvalues: np.ndarray, cfg: StageConfig) -> int:
    """Number of AC components kept under ``cfg``'s truncation rule."""
    n_ac = eigenvalues.shape[0]
    if cfg.truncation == "all":
        return n_ac
    if cfg.truncation == "top":
        if cfg.top_k > n_ac + 1:
            raise ConfigError(f"top_k={cfg.top_k} exceeds patch dimension {n_ac + 1}")
        return cfg.top_k - 1
    floor = min(cfg.min_components, n_ac)
    total = float(eigenvalues.sum())
    if total <= 0.0:
        return floor
    frac = np.cumsum(eigenvalues) / total
    keep = int(np.searchsorted(frac, cfg.energy - 1e-12)) + 1
    return max(floor, min(keep, n_ac))


def kernels_from_correlation(r: np.ndarray, cfg: StageConfig, n_patches: int) -> SaakKernelSet:
    values, basis = ac_spectrum(r)
    keep = retained_count(values, cfg)
    return SaakKernelSet(
        dc=dc_vector(r.shape[0]).astype(np.float32),
        ac_basis=np.ascontiguousarray(basis[:keep], dtype=np.float32),
        eigenvalues=values[:keep].copy(),
        spectrum=values,
        kernel_size=cfg.kernel_size,
        stride=cfg.stride,
        pool=cfg.pool,
        truncation=cfg.truncation_spec,
        n_patches=n_patches,
    )


def fit_stage_kernels(features, cfg: StageConfig, chunk: int = 512) -> SaakKernelSet:
    """Fit one stage on an N x D1 x D2 x K tensor (or an iterable of such
    chunks, accumulated in order)."""
    from .transform import extract_patches

    blocks: Iterable[np.ndarray]
    if isinstance(features, np.ndarray):
        if features.ndim != 4 or features.shape[0] == 0:
            raise DomainError(f"features must be a non-empty rank-4 tensor, got {features.shape}")
        blocks = (features[s : s + chunk] for s in range(0, features.shape[0], chunk))
    else:
        blocks = features
    acc = None
    for block in blocks:
        patches = extract_patches(block, cfg.kernel_size, cfg.stride)
        if acc is None:
            dim = patches.shape[1]
            if cfg.truncation == "top" and cfg.top_k > dim:
                raise ConfigError(f"top_k={cfg.top_k} exceeds patch dimension {dim}")
            acc = CorrelationAccumulator(dim)
        acc.add(patches)
    if acc is None or acc.count == 0:
        raise DomainError("no patches to fit")
    return kernels_from_correlation(acc.result(), cfg, acc.count)


@dataclass(frozen=True)
class CosineSimilarity:
    per_component: np.ndarray
    mean: float


def kernel_cosine_similarity(a: SaakKernelSet, b: SaakKernelSet) -> CosineSimilarity:
    if a.input_dim != b.input_dim or a.ac_basis.shape != b.ac_basis.shape:
        raise DomainError(
            f"kernel sets differ: dims {a.input_dim}/{b.input_dim}, "
            f"retained {a.retained}/{b.retained}"
        )
    x = a.ac_basis.astype(np.float64)
    y = b.ac_basis.astype(np.float64)
    num = np.abs((x * y).sum(axis=1))
    den = np.linalg.norm(x, axis=1) * np.linalg.norm(y, axis=1)
    cos = np.clip(np.divide(num, den, out=np.zeros_like(num), where=den > 0), 0.0, 1.0)
    return CosineSimilarity(cos, float(cos.mean()) if cos.size else 1.0)


# ---------------------------------------------------------------------------
# persistence: <stem>.saak holds the basis rows (DC first), <stem>.meta the rest


def save_kernels(path, kernels: SaakKernelSet) -> None:
    path = Path(path)
    dataset_io.save_tensor(path, kernels.basis())
    dataset_io.write_meta(
        path.with_suffix(".meta"),
        "kernels",
        {
            "input_dim": kernels.input_dim,
            "retained": kernels.retained,
            "kernel_size": kernels.kernel_size,
            "stride": kernels.stride,
            "pool": kernels.pool,
            "truncation": kernels.truncation,
            "n_patches": kernels.n_patches,
            "eigenvalues": [float(v) for v in kernels.eigenvalues],
            "spectrum": [float(v) for v in kernels.spectrum],
        },
    )


def load_kernels(path) -> SaakKernelSet:
    path = Path(path)
    rows = dataset_io.load_tensor(path)
    meta = dataset_io.read_meta(path.with_suffix(".meta"), "kernels")
    try:
        retained = int(meta["retained"])
        input_dim = int(meta["input_dim"])
        eig = dataset_io.parse_floats(meta.get("eigenvalues", ""))
        spectrum = dataset_io.parse_floats(meta.get("spectrum", ""))
        ks = int(meta["kernel_size"])
        stride = int(meta["stride"])
        pool = meta["pool"] == "true"
        truncation = meta["truncation"]
        n_patches = int(meta.get("n_patches", 0))
    except (KeyError, ValueError) as e:
        raise DataFormatError(f"{path}: bad kernel metadata ({e})") from e
    if rows.shape != (retained, input_dim) or eig.shape != (retained - 1,):
        raise DataFormatError(f"{path}: kernel tensor {rows.shape} disagrees with metadata")
    return SaakKernelSet(
        dc=rows[0].copy(),
        ac_basis=np.ascontiguousarray(rows[1:]),
        eigenvalues=eig,
        spectrum=spectrum,
        kernel_size=ks,
        stride=stride,
        pool=pool,
        truncation=truncation,
        n_patches=n_patches,
    )
