"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_core.py [--repeat 5]

Inputs are sized like a CIFAR-10 stage-1 batch of 256 images.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from saak import _backend


def cases(rng):
    x = rng.random((256, 32, 32, 3), dtype=np.float32)
    pooled = rng.random((256, 30, 30, 31), dtype=np.float32)
    proj = rng.standard_normal((256 * 900, 16), dtype=np.float32)
    feats = rng.random((2000, 15 * 15 * 31), dtype=np.float32)
    labels = rng.integers(0, 10, 2000)
    return {
        "extract_patches k3 s1": lambda m: m.extract_patches(x, 3, 1),
        "max_pool 2x2": lambda m: m.max_pool(pooled, 2, 2),
        "augment_relu": lambda m: m.augment_relu(np.ascontiguousarray(proj[:, 0]), proj[:, 1:].copy()),
        "bin_majority_wins B=10": lambda m: m.bin_majority_wins(feats, labels, 10, 10),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    py = _backend.get("python")
    try:
        core = _backend.get("cython")
    except ImportError:
        core = None
        print("compiled extension not built; timing numpy only")
    print(f"{'kernel':24} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, fn in cases(np.random.default_rng(0)).items():
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e3
        if core is None:
            print(f"{name:24} {t_py:10.1f}")
            continue
        t_c = min(timeit.repeat(lambda: fn(core), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:24} {t_py:10.1f} {t_c:10.1f} {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
