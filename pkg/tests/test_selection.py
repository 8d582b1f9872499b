from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from saak import selection as S
from saak.errors import ConfigError, DataFormatError, DomainError

LOG_INV_EPS = math.log(1 / S.EPS)


def single_location(values, labels):
    return np.asarray(values, np.float32).reshape(-1, 1, 1, 1), np.asarray(labels)


def random_instance(rng):
    n_classes = int(rng.integers(2, 5))
    n = int(rng.integers(n_classes, 41))
    d1, d2, k = (int(v) for v in rng.integers(1, [5, 5, 7]))
    labels = rng.integers(0, n_classes, n)
    kind = rng.integers(3)
    if kind == 0:
        x = rng.random((n, d1, d2, k))
    elif kind == 1:  # coarse values land exactly on bin edges and tie often
        x = rng.integers(0, 6, (n, d1, d2, k)) / 5.0
    else:  # class-dependent shift, plus a constant channel
        x = labels[:, None, None, None] + rng.normal(0, 0.7, (n, d1, d2, k))
        x[..., 0] = 0.25
    return x.astype(np.float32), labels, n_classes


class TestEntropyAgainstOracle:
    def test_fifty_random_instances(self):
        rng = np.random.default_rng(2024)
        for _ in range(50):
            x, y, c = random_instance(rng)
            got = S.entropy_map(x, y, c).values
            want = oracles.entropy_map(x, y, c)
            # same wins imply the same terms; only the summation order differs
            np.testing.assert_allclose(got, want, rtol=1e-12, atol=0)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 12))
    @settings(max_examples=40, deadline=None)
    def test_random_bins(self, seed, bins):
        rng = np.random.default_rng(seed)
        x, y, c = random_instance(rng)
        np.testing.assert_allclose(
            S.entropy_map(x, y, c, bins).values, oracles.entropy_map(x, y, c, bins), rtol=1e-12, atol=0
        )


class TestEntropyExamples:
    def test_two_halves(self):
        # class 0 fills bins 1-5, class 1 fills bins 6-10
        values = np.arange(20) / 19.0
        labels = (np.arange(20) >= 10).astype(int)
        em = S.entropy_map(*single_location(values, labels), 2)
        assert em.values[0, 0, 0] == pytest.approx(20 * math.log(2), rel=1e-12)

    def test_class_zero_wins_every_bin(self):
        # 15 class-0 samples across three bins; 5 class-1 samples always outvoted
        values = [0.0] * 6 + [0.5] * 5 + [1.0] * 4 + [0.0, 0.0, 0.5, 0.5, 1.0]
        labels = [0] * 15 + [1] * 5
        h = S.entropy_map(*single_location(values, labels), 2).values[0, 0, 0]
        want = 15 * math.log(10 / 3) + 5 * LOG_INV_EPS
        assert h == pytest.approx(want, rel=1e-12)
        assert h == pytest.approx(oracles.entropy_at(values, labels, 2), rel=1e-12)

    def test_ties_go_to_lowest_class(self):
        values = np.repeat(np.linspace(0, 1, 10), 2)
        labels = np.tile([1, 0], 10)
        h = S.entropy_map(*single_location(values, labels), 2).values[0, 0, 0]
        assert h == pytest.approx(10 * LOG_INV_EPS, rel=1e-12)

    def test_constant_location_sentinel(self):
        h = S.entropy_map(*single_location([0.4] * 6, [0, 1, 2, 0, 1, 2]), 3).values[0, 0, 0]
        assert h == pytest.approx(6 * LOG_INV_EPS)

    def test_max_edge_inclusive(self):
        h = S.entropy_map(*single_location([0, 1], [0, 1]), 2, bins=4).values[0, 0, 0]
        assert h == pytest.approx(2 * math.log(4))

    @pytest.mark.parametrize(
        "labels,c,err",
        [([0, 0, 0], 1, DomainError), ([0, 1, 2], 2, DomainError), ([0, -1, 1], 2, DomainError)],
    )
    def test_preconditions(self, labels, c, err):
        with pytest.raises(err):
            S.entropy_map(np.zeros((3, 1, 1, 1)), labels, c)

    def test_too_few_samples(self):
        with pytest.raises(DomainError):
            S.entropy_map(np.zeros((2, 1, 1, 1)), [0, 1], 3)


class TestEntropyProperties:
    def _instance(self, seed):
        rng = np.random.default_rng(seed)
        y = rng.integers(0, 3, 30)
        return (y[:, None, None, None] + rng.normal(0, 1, (30, 3, 3, 4))).astype(np.float32), y

    @given(st.integers(0, 1000))
    @settings(max_examples=20, deadline=None)
    def test_permutation_equivariant(self, seed):
        x, y = self._instance(seed)
        perm = np.random.default_rng(seed + 1).permutation(30)
        a = S.entropy_map(x, y, 3).values
        b = S.entropy_map(x[perm], y[perm], 3).values
        np.testing.assert_allclose(a, b, rtol=1e-12)

    @given(st.integers(0, 1000))
    @settings(max_examples=20, deadline=None)
    def test_duplication_doubles(self, seed):
        x, y = self._instance(seed)
        a = S.entropy_map(x, y, 3)
        b = S.entropy_map(np.concatenate([x, x]), np.concatenate([y, y]), 3)
        np.testing.assert_allclose(b.values, 2 * a.values, rtol=1e-12)
        assert S.select(a) == S.select(b)

    def test_separating_location_beats_noise(self, rng):
        # separation into pure, gap-free bins vs. two class-independent locations
        y = np.repeat([0, 1], 20)
        x = np.empty((40, 1, 3, 1), np.float32)
        x[:, 0, 0, 0] = np.linspace(0, 1, 40)
        x[:, 0, 1, 0] = np.repeat(np.linspace(0, 1, 20), 2)[np.argsort(np.tile([0, 1], 20), kind="stable")]
        x[:, 0, 2, 0] = rng.random(40)
        h = S.entropy_map(x, y, 2).values.ravel()
        assert h[0] == pytest.approx(40 * math.log(2))
        assert h[0] < h[1] and h[0] < h[2]
        np.testing.assert_allclose(h, oracles.entropy_map(x, y, 2).ravel(), rtol=1e-12)

    def test_gapped_separation_is_not_rewarded(self):
        # wins count bins, not samples: clusters that leave bins empty score worse
        y = np.repeat([0, 1, 2], 4)
        x = (y * 10 + np.tile([0.0, 0.1, 0.2, 0.3], 3)).astype(np.float32).reshape(-1, 1, 1, 1)
        h = S.entropy_map(x, y, 3).values[0, 0, 0]
        assert h == pytest.approx(oracles.entropy_at(x.ravel(), y, 3), rel=1e-12)
        assert h > 12 * math.log(3)


def emap(values):
    return S.EntropyMap(np.asarray(values, dtype=np.float64), 10, 2)


class TestRanking:
    def test_spectral_example(self):
        e = emap(np.broadcast_to([5.0, 1.0, 3.0], (2, 2, 3)))
        assert S.rank_spectral(e, 2) == [1, 2]

    def test_spectral_keep_all(self, rng):
        e = emap(rng.random((2, 2, 5)))
        assert S.rank_spectral(e, 5) == list(range(5))
        assert S.rank_spectral(e, 1.0) == list(range(5))

    def test_spectral_ties_prefer_lower_index(self):
        e = emap(np.ones((1, 1, 4)))
        assert S.rank_spectral(e, 2) == [0, 1]

    def test_spectral_against_sort_oracle(self, rng):
        for _ in range(20):
            v = rng.integers(0, 4, (3, 3, 8)).astype(float)
            keep = int(rng.integers(1, 9))
            means = [v[:, :, c].mean() for c in range(8)]
            want = sorted(sorted(range(8), key=lambda c: (means[c], c))[:keep])
            assert S.rank_spectral(emap(v), keep) == want

    def test_spatial_example(self):
        e = emap(np.array([[1, 4], [2, 3]], float)[..., None])
        mask = S.select(e, 1, 2)
        assert mask.positions(0) == [(0, 0), (1, 0)]

    def test_spatial_keep_all(self, rng):
        e = emap(rng.random((3, 2, 2)))
        assert S.rank_spatial(e, 1.0) == {0: list(range(6)), 1: list(range(6))}

    def test_spatial_against_oracle(self, rng):
        v = rng.integers(0, 3, (4, 3, 2)).astype(float)
        got = S.rank_spatial(emap(v), 5)
        for c in range(2):
            flat = [v[i, j, c] for i in range(4) for j in range(3)]
            want = sorted(sorted(range(12), key=lambda p: (flat[p], p))[:5])
            assert got[c] == want

    @pytest.mark.parametrize("keep", [0, 4, 1.5, 0.0])
    def test_budget_out_of_range(self, keep):
        with pytest.raises(ConfigError):
            S.rank_spectral(emap(np.ones((1, 1, 3))), keep)

    def test_fraction_rounds_up(self):
        assert len(S.rank_spectral(emap(np.ones((1, 1, 7))), 0.75)) == 6


class TestApplySelection:
    def test_keep_all_zeroed_identity(self, rng):
        x = rng.random((3, 2, 3, 4), dtype=np.float32)
        np.testing.assert_array_equal(S.apply_selection(x, S.full_mask((2, 3, 4)), "zeroed"), x)

    def test_packed_order(self):
        x = np.arange(2 * 2 * 3, dtype=np.float32).reshape(1, 2, 2, 3)
        mask = S.SelectionMask((2, 2, 3), (0, 2), {0: (1, 2), 2: (0, 3)})
        # channel 0 at positions 1, 2, then channel 2 at positions 0, 3
        assert S.apply_selection(x, mask).tolist() == [[3, 6, 2, 11]]

    def test_empty_spatial_keep(self, rng):
        x = rng.random((2, 2, 2, 3), dtype=np.float32)
        mask = S.SelectionMask((2, 2, 3), (1,), {1: ()})
        assert S.apply_selection(x, mask).shape == (2, 0)
        assert not S.apply_selection(x, mask, "zeroed").any()

    def test_packed_length_counts(self, rng):
        for _ in range(10):
            grid = tuple(int(v) for v in rng.integers(1, 5, 3))
            mask = S.select(emap(rng.random(grid)), float(rng.uniform(0.1, 1)), float(rng.uniform(0.1, 1)))
            x = rng.random((2,) + grid, dtype=np.float32)
            assert S.apply_selection(x, mask).shape == (2, sum(len(p) for p in mask.spatial_keep.values()))
            z = S.apply_selection(x, mask, "zeroed")
            assert np.count_nonzero(z) <= mask.feature_count * 2

    def test_grid_mismatch(self):
        with pytest.raises(DomainError):
            S.apply_selection(np.zeros((1, 2, 2, 2)), S.full_mask((2, 2, 3)))

    def test_inconsistent_mask(self):
        with pytest.raises(DomainError):
            S.SelectionMask((2, 2, 3), (0, 1), {0: (0,)})
        with pytest.raises(DomainError):
            S.SelectionMask((2, 2, 3), (0,), {0: (4,)})


class TestMaskFile:
    def test_round_trip(self, tmp_path, rng):
        mask = S.select(emap(rng.random((3, 4, 5))))
        S.save_mask(tmp_path / "m.mask", mask)
        assert S.load_mask(tmp_path / "m.mask") == mask

    def test_format(self, tmp_path):
        S.save_mask(tmp_path / "m.mask", S.SelectionMask((2, 2, 3), (0, 2), {0: (1,), 2: (0, 3)}))
        assert (tmp_path / "m.mask").read_text() == "saak-mask 1\ngrid 2 2 3\nchannel 0: 0,1\nchannel 2: 0,0 1,1\n"

    @pytest.mark.parametrize(
        "text", ["", "saak-mask 2\n", "saak-mask 1\ngrid 2 2\n", "saak-mask 1\ngrid 2 2 3\nchannel 9: 0,0\n"]
    )
    def test_malformed(self, tmp_path, text):
        (tmp_path / "m.mask").write_text(text)
        with pytest.raises(DataFormatError):
            S.load_mask(tmp_path / "m.mask")
