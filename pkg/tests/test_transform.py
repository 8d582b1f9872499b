from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from saak import transform as T
from saak.errors import ConfigError, DomainError, UnsupportedConfigError
from saak.kernels import StageConfig, fit_stage_kernels

unit_images = hnp.arrays(
    np.float32,
    st.tuples(st.integers(1, 6), st.integers(4, 9), st.integers(4, 9), st.integers(1, 3)),
    elements=st.floats(0, 1, width=32),
)
geometries = st.sampled_from([(2, 1, False), (2, 2, False), (3, 1, False), (2, 1, True), (3, 1, True), (3, 3, False)])


def fitted(x, ks, stride, pool=False, truncation="all"):
    cfg = StageConfig(ks, stride, pool, **StageConfig.parse_truncation(truncation))
    return cfg, fit_stage_kernels(x, cfg)


class TestPatches:
    def test_quadrants(self, rng):
        x = rng.random((1, 4, 4, 1), dtype=np.float32)
        p = T.extract_patches(x, 2, 2)
        assert p.shape == (4, 4)
        np.testing.assert_array_equal(p[0], x[0, :2, :2, 0].ravel())

    def test_overlapping_count(self):
        assert T.extract_patches(np.zeros((1, 4, 4, 1)), 2, 1).shape == (9, 4)

    def test_cifar_grid(self):
        assert T.stage_output_hw(32, 32, 3, 1, False) == (30, 30)

    def test_too_small(self):
        with pytest.raises(DomainError):
            T.extract_patches(np.zeros((1, 2, 5, 1)), 3, 1)

    @given(unit_images, st.sampled_from([(2, 1), (2, 2), (3, 1), (3, 3), (5, 1)]))
    @settings(max_examples=40, deadline=None)
    def test_matches_loop_oracle(self, x, geometry):
        ks, stride = geometry
        if min(x.shape[1:3]) < ks:
            return
        np.testing.assert_array_equal(T.extract_patches(x, ks, stride), oracles.patches(x, ks, stride))


class TestMaxPool:
    def test_example(self):
        x = np.array([[1, 3], [2, 0]], np.float32).reshape(1, 2, 2, 1)
        assert T.max_pool(x).ravel().tolist() == [3.0]

    def test_floor_on_odd(self):
        assert T.max_pool(np.zeros((1, 15, 15, 2))).shape == (1, 7, 7, 2)

    @given(unit_images)
    @settings(max_examples=40, deadline=None)
    def test_matches_oracle_and_bounded(self, x):
        y = T.max_pool(x)
        np.testing.assert_array_equal(y, oracles.max_pool(x))
        assert y.min() >= 0 and y.max() <= x.max()


class TestForwardStage:
    def test_pure_dc_patch(self):
        c = 0.3
        x = np.full((1, 2, 2, 1), c, np.float32)
        _, k = fitted(np.random.default_rng(0).random((4, 2, 2, 1), dtype=np.float32), 2, 2)
        g = T.forward_stage(x, k)
        assert g.shape == (1, 1, 1, 7)
        assert g[0, 0, 0, 0] == pytest.approx(2 * c, abs=1e-6)
        assert np.abs(g[0, 0, 0, 1:]).max() < 1e-6

    def test_parseval_example(self, rng):
        x = rng.random((1, 4, 4, 1), dtype=np.float32)
        _, k = fitted(x, 2, 2)
        g = T.forward_stage(x, k).astype(np.float64)
        p = np.concatenate([g[..., :1], g[..., 1::2] - g[..., 2::2]], axis=-1)
        assert abs((p**2).sum() - (x.astype(np.float64) ** 2).sum()) <= 1e-5 * (x.astype(np.float64) ** 2).sum()

    def test_shape_law_keep_all(self, rng):
        x = rng.random((3, 6, 6, 3), dtype=np.float32)
        cfg, k = fitted(x, 2, 1)
        assert T.forward_stage(x, k, cfg).shape[3] == 2 * (4 * 3) - 1

    def test_dimension_mismatch(self, rng):
        _, k = fitted(rng.random((3, 6, 6, 1), dtype=np.float32), 2, 1)
        with pytest.raises(DomainError):
            T.forward_stage(np.zeros((1, 6, 6, 2), np.float32), k)

    def test_chunking_is_invisible(self, rng, monkeypatch):
        x = rng.random((9, 8, 8, 1), dtype=np.float32)
        cfg, k = fitted(x, 2, 1, pool=True)
        whole = T.forward_stage(x, k, cfg)
        monkeypatch.setattr(T, "_BLOCK_ELEMS", 1)
        assert T.forward_stage(x, k, cfg).tobytes() == whole.tobytes()


@given(unit_images, geometries, st.sampled_from(["all", "energy:0.9", "top:2"]))
@settings(max_examples=80, deadline=None)
def test_coefficients_nonnegative_and_pairs_exclusive(x, geometry, trunc):
    ks, stride, pool = geometry
    if min(x.shape[1:3]) < ks + (1 if pool else 0):
        return
    cfg, k = fitted(x, ks, stride, pool, trunc)
    g = T.forward_stage(x, k, cfg)
    assert g.min() >= 0
    assert g.shape[3] == 2 * k.retained - 1
    if not pool:
        assert not np.any(g[..., 1::2] * g[..., 2::2])


@given(unit_images, st.sampled_from([(2, 1), (2, 2), (3, 1), (3, 3)]))
@settings(max_examples=60, deadline=None)
def test_parseval_per_patch(x, geometry):
    ks, stride = geometry
    if min(x.shape[1:3]) < ks:
        return
    cfg, k = fitted(x, ks, stride)
    g = T.forward_stage(x, k, cfg).astype(np.float64).reshape(-1, k.augmented_count)
    p = np.concatenate([g[:, :1], g[:, 1::2] - g[:, 2::2]], axis=1)
    f = T.extract_patches(x, ks, stride).astype(np.float64)
    e_in, e_out = (f**2).sum(axis=1), (p**2).sum(axis=1)
    assert np.all(np.abs(e_out - e_in) <= 1e-5 * np.maximum(e_in, 1e-3))


class TestCascade:
    CIFAR = [StageConfig(3, 1, True), StageConfig(3, 1, True), StageConfig(3, 1, False)]

    def test_cifar_dimension_chain(self):
        shapes = T.cascade_shapes(32, 32, self.CIFAR)
        assert [s[0] for s in shapes] == [15, 6, 4]
        # pre-pool grids 30 and 13
        assert T.window_count(32, 3, 1) == 30 and T.window_count(15, 3, 1) == 13

    def test_cifar_chain_on_real_tensor(self, rng):
        x = rng.random((6, 32, 32, 3), dtype=np.float32)
        configs = [StageConfig(3, 1, c.pool, truncation="top", top_k=4) for c in self.CIFAR]
        outs = T.forward_cascade(x, T.fit_cascade(x, configs))
        assert [o.shape[1:3] for o in outs] == [(15, 15), (6, 6), (4, 4)]

    def test_mnist_non_overlapping_stops_after_two(self):
        assert T.auto_stage_count(28, 28, 2, 2, False) == 2
        assert T.auto_stage_count(32, 32, 3, 1, True) == 3

    def test_stage_too_small_names_stage(self):
        with pytest.raises(ConfigError, match="stage 2"):
            T.cascade_shapes(8, 8, [StageConfig(5, 1), StageConfig(5, 1)])

    def test_single_stage_equals_forward_stage(self, rng):
        x = rng.random((4, 8, 8, 1), dtype=np.float32)
        c = T.fit_cascade(x, [StageConfig(2, 1, True)])
        (out,) = T.forward_cascade(x, c)
        assert out.tobytes() == T.forward_stage(x, c.kernels[0], c.configs[0]).tobytes()

    def test_fit_cascade_matches_manual_chain(self, rng):
        x = rng.random((20, 8, 8, 1), dtype=np.float32)
        cfgs = [StageConfig(2, 1, True), StageConfig(2, 1)]
        c = T.fit_cascade(x, cfgs, chunk=7)
        k1 = fit_stage_kernels(x, cfgs[0])
        k2 = fit_stage_kernels(T.forward_stage(x, k1, cfgs[0]), cfgs[1])
        np.testing.assert_allclose(c.kernels[1].basis(), k2.basis(), atol=1e-5)

    def test_chain_validation(self, rng):
        x = rng.random((4, 8, 8, 1), dtype=np.float32)
        a = T.fit_cascade(x, [StageConfig(2, 1, True)]).stages[0]
        with pytest.raises(ConfigError):
            T.SaakCascade((a, a))


class TestInverse:
    def test_one_stage_round_trip(self, rng):
        x = rng.random((1, 4, 4, 1), dtype=np.float32)
        _, k = fitted(x, 2, 2)
        assert np.abs(T.inverse_stage(T.forward_stage(x, k), k) - x).max() < 1e-5

    def test_zero_features(self, rng):
        _, k = fitted(rng.random((3, 4, 4, 1), dtype=np.float32), 2, 2)
        assert not T.inverse_stage(np.zeros((1, 2, 2, 7), np.float32), k).any()

    def test_two_stage_round_trip(self, rng):
        x = rng.random((5, 8, 8, 1), dtype=np.float32)
        c = T.fit_cascade(x, [StageConfig(2, 2, truncation="all")] * 2)
        out = T.forward_cascade(x, c)[-1]
        assert np.abs(T.inverse_cascade(out, c) - x).max() < 1e-4

    @given(
        hnp.arrays(np.float32, st.tuples(st.integers(1, 4), st.sampled_from([4, 8]), st.sampled_from([4, 8]), st.integers(1, 2)),
                   elements=st.floats(0, 1, width=32)),
        st.integers(1, 2),
    )
    @settings(max_examples=40, deadline=None)
    def test_lossless_round_trip(self, x, n_stages):
        c = T.fit_cascade(x, [StageConfig(2, 2, truncation="all")] * n_stages)
        out = T.forward_cascade(x, c)[-1]
        assert np.abs(T.inverse_cascade(out, c) - x).max() < 1e-5

    @pytest.mark.parametrize(
        "ks,stride,pool,trunc", [(2, 1, False, "all"), (2, 2, True, "all"), (2, 2, False, "top:2")]
    )
    def test_lossy_configs_unsupported(self, rng, ks, stride, pool, trunc):
        x = rng.random((4, 8, 8, 1), dtype=np.float32)
        cfg, k = fitted(x, ks, stride, pool, trunc)
        with pytest.raises(UnsupportedConfigError):
            T.inverse_stage(T.forward_stage(x, k, cfg), k)


class TestRmse:
    def test_identical(self, rng):
        a = rng.random((3, 4, 4, 5))
        assert not T.rmse_per_spectral(a, a).values.any()
        assert not T.rmse_per_spectral(a, a, normalize=True).values.any()

    def test_plus_one(self, rng):
        a = rng.random((3, 4, 4, 5))
        np.testing.assert_allclose(T.rmse_per_spectral(a, a + 1).values, 1.0)

    def test_against_oracle(self, rng):
        a = rng.random((4, 3, 3, 6))
        b = a + rng.normal(0, 0.1, a.shape)
        np.testing.assert_allclose(T.rmse_per_spectral(a, b).values, oracles.rmse(a, b), atol=1e-6)

    def test_normalized_degenerate_channel(self, rng):
        a = rng.random((2, 3, 3, 3))
        a[..., 1] = 0
        b = a + 0.5
        r = T.rmse_per_spectral(a, b, normalize=True)
        assert r.degenerate.tolist() == [False, True, False]
        assert r.values[1] == 0
        ref = np.sqrt((a[..., 0] ** 2).mean())
        assert r.values[0] == pytest.approx(0.5 / ref)

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            T.rmse_per_spectral(np.zeros((1, 2, 2, 3)), np.zeros((1, 2, 2, 4)))
