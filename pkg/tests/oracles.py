"""Slow, loop-based reference implementations used as test oracles.

Nothing here imports from the package, so a shared bug cannot hide.
"""

from __future__ import annotations

import math

import numpy as np

EPS = 1e-8


def entropy_at(values, labels, n_classes, bins=10):
    """Histogram-majority cross-entropy of one location, straight from the
    definition: bin, vote, count wins, sum per-sample log loss."""
    values = [float(v) for v in values]
    lo, hi = min(values), max(values)
    n = len(values)
    if hi == lo:
        return n * math.log(1.0 / EPS)
    members = [[] for _ in range(bins)]
    for v, c in zip(values, labels):
        b = int((v - lo) * bins / (hi - lo))
        members[min(b, bins - 1)].append(int(c))
    wins = [0] * n_classes
    for m in members:
        if not m:
            continue
        counts = [m.count(c) for c in range(n_classes)]
        wins[counts.index(max(counts))] += 1
    total = 0.0
    for c in labels:
        p = wins[int(c)] / bins
        total += math.log(1.0 / max(p, EPS))
    return total


def entropy_map(features, labels, n_classes, bins=10):
    x = np.asarray(features, dtype=np.float32)
    n, d1, d2, k = x.shape
    out = np.zeros((d1, d2, k))
    for i in range(d1):
        for j in range(d2):
            for c in range(k):
                out[i, j, c] = entropy_at(x[:, i, j, c], labels, n_classes, bins)
    return out


def patches(x, ks, stride):
    """Rows in (image, row, col) order; each row is the window flattened
    spatial row-major with channels innermost."""
    n, h, w, k = x.shape
    rows = []
    for img in range(n):
        for i in range(0, h - ks + 1, stride):
            for j in range(0, w - ks + 1, stride):
                row = []
                for di in range(ks):
                    for dj in range(ks):
                        for ch in range(k):
                            row.append(x[img, i + di, j + dj, ch])
                rows.append(row)
    return np.array(rows, dtype=x.dtype)


def max_pool(x):
    n, h, w, k = x.shape
    out = np.zeros((n, h // 2, w // 2, k), dtype=x.dtype)
    for a in range(n):
        for i in range(h // 2):
            for j in range(w // 2):
                for c in range(k):
                    out[a, i, j, c] = max(
                        x[a, 2 * i, 2 * j, c],
                        x[a, 2 * i + 1, 2 * j, c],
                        x[a, 2 * i, 2 * j + 1, c],
                        x[a, 2 * i + 1, 2 * j + 1, c],
                    )
    return out


def central_difference(f, params, h=1e-6):
    """Numerical gradient of scalar f with respect to every array in params
    (arrays are perturbed in place and restored)."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            up = f()
            p[idx] = old - h
            down = f()
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def relative_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def rmse(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    k = a.shape[3]
    out = []
    for c in range(k):
        diffs = (a[..., c] - b[..., c]).ravel()
        out.append(math.sqrt(sum(d * d for d in diffs) / diffs.size))
    return np.array(out)
