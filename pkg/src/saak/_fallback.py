"""Pure numpy versions of the hot loops; same signatures and results as the
compiled ``_core`` module."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_LOCATION_CHUNK = 2048


def extract_patches(x, ks, stride):
    n, h, w, k = x.shape
    d1 = (h - ks) // stride + 1
    d2 = (w - ks) // stride + 1
    win = sliding_window_view(x, (ks, ks), axis=(1, 2))[:, ::stride, ::stride]
    # win: n, d1, d2, k, ks, ks -> n, d1, d2, ks, ks, k
    win = win[:, :d1, :d2].transpose(0, 1, 2, 4, 5, 3)
    return np.ascontiguousarray(win, dtype=np.float32).reshape(n * d1 * d2, ks * ks * k)


def max_pool(x, window, stride):
    n, h, w, k = x.shape
    d1 = (h - window) // stride + 1
    d2 = (w - window) // stride + 1
    win = sliding_window_view(x, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    pooled = win[:, :d1, :d2].max(axis=(4, 5)) + np.float32(0.0)  # which zero wins a tie is unspecified
    return np.ascontiguousarray(pooled, dtype=np.float32)


def augment_relu(dc, proj):
    m, r = proj.shape
    out = np.empty((m, 2 * r + 1), dtype=np.float32)
    out[:, 0] = dc
    out[:, 1::2] = np.where(proj > 0, proj, 0)
    out[:, 2::2] = np.where(proj < 0, -proj, 0)
    return out


def bin_majority_wins(x, labels, n_classes, n_bins):
    """Per column of ``x`` (N x L): histogram into equal-width bins over the
    column's [min, max], take each non-empty bin's majority class (lowest
    index on ties) and count how many bins each class wins.

    Returns (wins int32 L x C, constant uint8 L) where ``constant`` flags
    columns with min == max (their wins row is left at zero).
    """
    n, L = x.shape
    labels = np.asarray(labels, dtype=np.int64)
    wins = np.zeros((L, n_classes), dtype=np.int32)
    constant = np.zeros(L, dtype=np.uint8)
    for start in range(0, L, _LOCATION_CHUNK):
        stop = min(start + _LOCATION_CHUNK, L)
        cols = x[:, start:stop].astype(np.float64)
        lo = cols.min(axis=0)
        hi = cols.max(axis=0)
        flat_const = hi == lo
        span = np.where(flat_const, 1.0, hi - lo)
        idx = ((cols - lo) * n_bins / span).astype(np.int64)
        np.minimum(idx, n_bins - 1, out=idx)
        width = stop - start
        loc = np.arange(width, dtype=np.int64)
        key = ((loc * n_bins + idx) * n_classes + labels[:, None]).ravel()
        counts = np.bincount(key, minlength=width * n_bins * n_classes)
        counts = counts.reshape(width, n_bins, n_classes)
        major = counts.argmax(axis=2)
        filled = counts.max(axis=2) > 0
        loc_b = np.broadcast_to(loc[:, None], major.shape)
        win_key = (loc_b * n_classes + major)[filled]
        w = np.bincount(win_key, minlength=width * n_classes).reshape(width, n_classes)
        w[flat_const] = 0
        wins[start:stop] = w
        constant[start:stop] = flat_const
    return wins, constant
