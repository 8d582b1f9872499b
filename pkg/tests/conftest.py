from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np
import pytest

from saak import dataset_io

DATA_ROOT = Path(os.environ.get("SAAK_DATA_DIR", "/root/data"))


def write_idx(path, magic, dims, payload: bytes):
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(f">{len(dims)}I", *dims))
        f.write(payload)


def synthetic_images(n, side=8, classes=3, channels=1, seed=0):
    """Each class brightens a different horizontal band; noise on top."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % classes
    x = rng.uniform(0.0, 0.3, size=(n, side, side, channels))
    band = max(1, side // classes)
    for i, c in enumerate(labels):
        x[i, c * band : (c + 1) * band] += 0.6
    return np.clip(x, 0, 1).astype(np.float32), labels.astype(np.int64)


def write_tensor_config(tmp_path, side=8, classes=3, n_train=60, n_test=30, stages=None, extra=""):
    xtr, ytr = synthetic_images(n_train, side, classes, seed=1)
    xte, yte = synthetic_images(n_test, side, classes, seed=2)
    d = Path(tmp_path)
    for name, arr in (("xtr", xtr), ("ytr", ytr), ("xte", xte), ("yte", yte)):
        dataset_io.save_tensor(d / f"{name}.saak", arr)
    stages = stages or [
        "[stage.1]\nkernel_size = 2\nstride = 1\npool = yes\n",
        "[stage.2]\nkernel_size = 2\nstride = 1\npool = no\n",
    ]
    text = (
        "[experiment]\nversion = 1\ndataset = tensor\n"
        "train_images = xtr.saak\ntrain_labels = ytr.saak\n"
        "test_images = xte.saak\ntest_labels = yte.saak\n"
        f"class_count = {classes}\nseed = 3\nout = run\n\n"
        + "\n".join(stages)
        + "\n[classifier]\nkind = lr\nepochs = 30\n"
        + extra
    )
    cfg = d / "exp.ini"
    cfg.write_text(text)
    return cfg


@pytest.fixture
def tensor_config(tmp_path):
    return write_tensor_config(tmp_path)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
