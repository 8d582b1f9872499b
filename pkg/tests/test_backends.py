"""The compiled and numpy kernels must agree bit for bit."""

from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from saak import _backend

try:
    core = _backend.get("cython")
except ImportError:
    core = None
py = _backend.get("python")

needs_core = pytest.mark.skipif(core is None, reason="compiled extension not built")
tensors = hnp.arrays(
    np.float32,
    st.tuples(st.integers(1, 4), st.integers(5, 9), st.integers(5, 9), st.integers(1, 3)),
    elements=st.floats(-1, 1, width=32),
)


@needs_core
class TestEquivalence:
    @given(tensors, st.sampled_from([(2, 1), (2, 2), (3, 1), (3, 3), (5, 1)]))
    @settings(max_examples=40, deadline=None)
    def test_extract_patches(self, x, geometry):
        a = core.extract_patches(x, *geometry)
        b = py.extract_patches(x, *geometry)
        assert a.dtype == b.dtype and a.tobytes() == b.tobytes()

    @given(tensors)
    @settings(max_examples=40, deadline=None)
    def test_max_pool(self, x):
        assert np.asarray(core.max_pool(x, 2, 2)).tobytes() == py.max_pool(x, 2, 2).tobytes()

    @given(hnp.arrays(np.float32, st.tuples(st.integers(1, 30), st.integers(0, 8)),
                      elements=st.floats(-5, 5, width=32)))
    @settings(max_examples=40, deadline=None)
    def test_augment_relu(self, proj):
        dc = np.ascontiguousarray(proj[:, 0] if proj.shape[1] else np.zeros(proj.shape[0], np.float32))
        a = np.asarray(core.augment_relu(dc, proj))
        b = py.augment_relu(dc, proj)
        assert a.tobytes() == b.tobytes()  # includes the sign of zero

    @given(st.integers(0, 2**32 - 1), st.integers(1, 12))
    @settings(max_examples=40, deadline=None)
    def test_bin_majority_wins(self, seed, bins):
        rng = np.random.default_rng(seed)
        n, c, locs = int(rng.integers(2, 50)), int(rng.integers(2, 6)), int(rng.integers(1, 40))
        x = (rng.integers(0, 7, (n, locs)) / 6).astype(np.float32)
        x[:, 0] = 0.5
        y = rng.integers(0, c, n)
        wa, ca = core.bin_majority_wins(x, y, c, bins)
        wb, cb = py.bin_majority_wins(x, y, c, bins)
        np.testing.assert_array_equal(np.asarray(wa), wb)
        np.testing.assert_array_equal(np.asarray(ca), cb)


@pytest.mark.parametrize("mod", [py] + ([core] if core is not None else []), ids=lambda m: m.__name__)
def test_backend_matches_loop_oracles(mod, rng):
    x = rng.random((2, 7, 6, 2), dtype=np.float32)
    np.testing.assert_array_equal(np.asarray(mod.extract_patches(x, 3, 1)), oracles.patches(x, 3, 1))
    np.testing.assert_array_equal(np.asarray(mod.max_pool(x, 2, 2)), oracles.max_pool(x))


def test_environment_switch_forces_numpy():
    env = dict(os.environ, SAAK_PURE_PYTHON="1")
    proc = subprocess.run(
        [sys.executable, "-c", "import saak; print(saak.BACKEND)"], env=env, capture_output=True, text=True
    )
    assert proc.stdout.strip() == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        _backend.get("fortran")
