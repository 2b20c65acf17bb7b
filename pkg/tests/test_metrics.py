import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from acreg.errors import GridMismatchError, InvalidInputError, UndefinedMetricError
from acreg.metrics import dice, local_ncc, rfp, tissue_jacobian_stats
from acreg.transform import DisplacementField, jacobian_determinant, zero_displacement
from acreg.volume import GridMeta, LabelVolume, ScalarVolume, one_hot_soft


def volume(values):
    arr = np.asarray(values, dtype=float)
    return ScalarVolume(GridMeta(arr.shape), arr)


class TestLocalNcc:
    def test_self_correlation_near_one(self, rng):
        a = volume(rng.normal(size=(12, 12, 12)))
        assert local_ncc(a, a, 5) >= 0.999

    def test_affine_invariance(self, rng):
        # equal up to the epsilon guard in the denominator
        a = volume(rng.normal(size=(10, 10, 10)))
        b = volume(2.0 * a.values + 3.0)
        assert local_ncc(a, b, 5) == pytest.approx(local_ncc(a, a, 5), abs=2e-5)

    def test_constant_second_argument_is_zero(self, rng):
        a = volume(rng.normal(size=(10, 10, 10)))
        b = volume(np.full((10, 10, 10), 4.2))
        assert local_ncc(a, b, 5) == pytest.approx(0.0, abs=1e-9)

    def test_symmetry_and_range(self, rng):
        a = volume(rng.normal(size=(9, 9, 9)))
        b = volume(rng.normal(size=(9, 9, 9)))
        forward = local_ncc(a, b, 5)
        assert forward == pytest.approx(local_ncc(b, a, 5), rel=1e-12)
        assert 0.0 <= forward <= 1.0

    def test_even_window_rejected(self, rng):
        a = volume(rng.normal(size=(8, 8, 8)))
        with pytest.raises(InvalidInputError):
            local_ncc(a, a, 4)

    def test_grid_mismatch_rejected(self, rng):
        a = volume(rng.normal(size=(8, 8, 8)))
        b = volume(rng.normal(size=(8, 8, 9)))
        with pytest.raises(GridMismatchError):
            local_ncc(a, b, 3)

    def test_matches_bruteforce_windows(self, rng):
        a = rng.normal(size=(7, 6, 8))
        b = rng.normal(size=(7, 6, 8))
        ours = local_ncc(volume(a), volume(b), 5)
        assert ours == pytest.approx(oracles.local_ncc(a, b, 5), rel=1e-9)

    def test_soft_maps_average_channels(self, rng):
        labels = LabelVolume(GridMeta((8, 8, 8)), rng.integers(0, 4, size=(8, 8, 8)))
        soft = one_hot_soft(labels, 1.0)
        value = local_ncc(soft, soft, 5)
        per_channel = np.mean([
            local_ncc(soft.channel(c), soft.channel(c), 5) for c in range(4)])
        assert value == pytest.approx(per_channel, rel=1e-12)
        assert value >= 0.999


class TestDice:
    def make(self, labels):
        arr = np.asarray(labels, dtype=np.uint8)
        return LabelVolume(GridMeta(arr.shape), arr)

    def test_identical_volumes(self, rng):
        a = self.make(rng.integers(0, 4, size=(6, 6, 6)))
        for label in a.present_labels():
            assert dice(a, a, label) == 1.0

    def test_disjoint_supports(self):
        arr_a = np.zeros((6, 6, 6), dtype=np.uint8)
        arr_b = np.zeros((6, 6, 6), dtype=np.uint8)
        arr_a[:3] = 2
        arr_b[3:] = 2
        assert dice(self.make(arr_a), self.make(arr_b), 2) == 0.0

    def test_half_overlap_arithmetic(self):
        arr_a = np.zeros((10, 10, 10), dtype=np.uint8)
        arr_b = np.zeros((10, 10, 10), dtype=np.uint8)
        arr_a.reshape(-1)[:100] = 3      # |A| = 100
        arr_b.reshape(-1)[50:150] = 3    # |B| = 100, overlap 50
        assert dice(self.make(arr_a), self.make(arr_b), 3) == pytest.approx(0.5)

    def test_absent_label_rejected(self):
        a = self.make(np.zeros((5, 5, 5)))
        with pytest.raises(UndefinedMetricError):
            dice(a, a, 3)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        a = self.make(rng.integers(0, 4, size=(5, 5, 5)))
        b = self.make(rng.integers(0, 4, size=(5, 5, 5)))
        for label in set(a.present_labels()) | set(b.present_labels()):
            assert dice(a, b, label) == pytest.approx(dice(b, a, label))


class TestRfp:
    def test_identity_and_translation(self):
        meta = GridMeta((8, 8, 8))
        assert rfp(zero_displacement(meta)) == 0.0
        u = np.zeros((8, 8, 8, 3))
        u[:] = (3.0, -2.0, 1.0)
        assert rfp(DisplacementField(meta, u)) == 0.0

    def test_single_folded_voxel(self):
        # a -3 spike folds exactly the voxel one step before it
        n = 64
        u = np.zeros((n, n, n, 3))
        u[32, 32, 32, 0] = -3.0
        phi = DisplacementField(GridMeta((n, n, n)), u)
        j = oracles.jacobian_determinant(u)
        assert int((j < 0).sum()) == 1
        assert rfp(phi) == pytest.approx(100.0 / n ** 3)
        assert rfp(phi) == pytest.approx(3.815e-4, rel=1e-3)

    def test_translation_invariance(self, rng):
        from conftest import sine_velocity
        from acreg.transform import integrate_svf

        phi = integrate_svf(sine_velocity(16, seed=9, amplitude=2.0), 6)
        shifted = DisplacementField(phi.meta, phi.u + np.array([1.5, -2.0, 0.5]))
        assert rfp(shifted) == rfp(phi)


class TestTissueJacobianStats:
    def test_identity_deformation(self, rng):
        meta = GridMeta((8, 8, 8))
        labels = LabelVolume(meta, rng.integers(0, 4, size=(8, 8, 8)))
        j = jacobian_determinant(zero_displacement(meta))
        stats = tissue_jacobian_stats(j, labels)
        for label in labels.present_labels():
            assert stats[label].min == pytest.approx(1.0)
            assert stats[label].mean == pytest.approx(1.0)

    def test_uniform_scaling(self, rng):
        meta = GridMeta((10, 10, 10))
        labels = LabelVolume(meta, rng.integers(0, 4, size=(10, 10, 10)))
        grid = np.stack(np.meshgrid(*[np.arange(10.0)] * 3, indexing="ij"), axis=-1)
        phi = DisplacementField(meta, 0.1 * grid)
        stats = tissue_jacobian_stats(jacobian_determinant(phi), labels)
        for label in labels.present_labels():
            assert stats[label].min == pytest.approx(1.331)
            assert stats[label].mean == pytest.approx(1.331)

    def test_matches_bruteforce_scan(self, rng):
        from conftest import sine_velocity
        from acreg.transform import integrate_svf

        meta = GridMeta((12, 12, 12))
        labels = LabelVolume(meta, rng.integers(0, 4, size=(12, 12, 12)))
        phi = integrate_svf(sine_velocity(12, seed=4, amplitude=2.0), 6)
        j = jacobian_determinant(phi)
        stats = tissue_jacobian_stats(j, labels)
        expected = oracles.tissue_stats(j.values, labels.labels)
        assert set(stats.regions) == set(expected)
        for label, (lo, mean, count) in expected.items():
            assert stats[label].min == pytest.approx(lo, rel=1e-12)
            assert stats[label].mean == pytest.approx(mean, rel=1e-12)
            assert stats[label].count == count
            assert stats[label].min <= stats[label].mean + 1e-15

    def test_grid_mismatch_rejected(self, rng):
        j = ScalarVolume(GridMeta((6, 6, 6)), np.ones((6, 6, 6)))
        labels = LabelVolume(GridMeta((6, 6, 7)), np.zeros((6, 6, 7), dtype=np.uint8))
        with pytest.raises(GridMismatchError):
            tissue_jacobian_stats(j, labels)
