import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from acreg.errors import GridMismatchError, InvalidInputError
from acreg.volume import (
    GridMeta,
    LabelVolume,
    ScalarVolume,
    SoftTissueMap,
    one_hot_soft,
    resample_level,
    sample_nearest,
    sample_trilinear,
)


def make_volume(values):
    arr = np.asarray(values, dtype=float)
    return ScalarVolume(GridMeta(arr.shape), arr)


class TestGridMeta:
    def test_rejects_nonpositive_spacing(self):
        with pytest.raises(InvalidInputError):
            GridMeta((4, 4, 4), (1.0, 0.0, 1.0))

    def test_rejects_bad_dims(self):
        with pytest.raises(InvalidInputError):
            GridMeta((4, 0, 4))

    def test_n_voxels(self):
        assert GridMeta((2, 3, 4)).n_voxels == 24


class TestContainers:
    def test_scalar_volume_rejects_nan(self):
        values = np.zeros((3, 3, 3))
        values[1, 1, 1] = np.nan
        with pytest.raises(InvalidInputError):
            make_volume(values)

    def test_scalar_volume_shape_mismatch(self):
        with pytest.raises(GridMismatchError):
            ScalarVolume(GridMeta((3, 3, 3)), np.zeros((3, 3, 4)))

    def test_label_volume_rejects_out_of_range(self):
        labels = np.zeros((3, 3, 3), dtype=np.uint8)
        labels[0, 0, 0] = 4
        with pytest.raises(InvalidInputError):
            LabelVolume(GridMeta((3, 3, 3)), labels)

    def test_values_frozen(self):
        vol = make_volume(np.zeros((3, 3, 3)))
        with pytest.raises(ValueError):
            vol.values[0, 0, 0] = 1.0

    def test_soft_map_requires_unit_sums(self):
        channels = np.zeros((3, 3, 3, 4))
        channels[..., 0] = 0.7
        with pytest.raises(InvalidInputError):
            SoftTissueMap(GridMeta((3, 3, 3)), channels)


class TestSampleTrilinear:
    def test_constant_volume(self):
        vol = make_volume(np.full((4, 4, 4), 5.0))
        assert sample_trilinear(vol, (1.3, 2.7, 0.2)) == pytest.approx(5.0)

    def test_exact_voxel_returns_stored_value(self, rng):
        vol = make_volume(rng.normal(size=(5, 5, 5)))
        for idx in [(0, 0, 0), (2, 3, 1), (4, 4, 4)]:
            assert sample_trilinear(vol, idx) == vol.values[idx]

    def test_midpoint_between_zero_and_one(self):
        values = np.zeros((4, 4, 4))
        values[2, 1, 1] = 1.0  # neighbor at (1,1,1) stays 0
        vol = make_volume(values)
        assert sample_trilinear(vol, (1.5, 1.0, 1.0)) == pytest.approx(0.5)

    def test_non_finite_point_rejected(self):
        vol = make_volume(np.zeros((4, 4, 4)))
        with pytest.raises(InvalidInputError):
            sample_trilinear(vol, (np.nan, 0, 0))

    def test_matches_bruteforce_including_clamps(self, rng):
        vol = make_volume(rng.normal(size=(5, 6, 7)))
        pts = rng.uniform(-3, 9, size=(50, 3))
        for p in pts:
            assert sample_trilinear(vol, p) == pytest.approx(
                oracles.trilinear(vol.values, p), abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.tuples(st.floats(-2, 5), st.floats(-2, 5), st.floats(-2, 5)))
    def test_bounded_by_neighbors(self, p):
        rng = np.random.default_rng(7)
        vol = make_volume(rng.normal(size=(4, 4, 4)))
        value = sample_trilinear(vol, p)
        assert vol.values.min() - 1e-12 <= value <= vol.values.max() + 1e-12


class TestSampleNearest:
    def setup_method(self):
        rng = np.random.default_rng(3)
        self.labels = LabelVolume(GridMeta((5, 5, 5)), rng.integers(0, 4, size=(5, 5, 5)))

    def test_nearest_voxel(self):
        assert sample_nearest(self.labels, (2.4, 1.0, 1.0)) == self.labels.labels[2, 1, 1]

    def test_half_rounds_up(self):
        assert sample_nearest(self.labels, (2.5, 1.0, 1.0)) == self.labels.labels[3, 1, 1]

    def test_out_of_range_clamps(self):
        assert sample_nearest(self.labels, (-3.0, 0.0, 0.0)) == self.labels.labels[0, 0, 0]

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInputError):
            sample_nearest(self.labels, (0.0, np.inf, 0.0))

    @settings(max_examples=30, deadline=None)
    @given(st.tuples(st.floats(-4, 8), st.floats(-4, 8), st.floats(-4, 8)))
    def test_returns_present_label(self, p):
        assert sample_nearest(self.labels, p) in self.labels.present_labels()


class TestOneHotSoft:
    def test_single_label_volume(self):
        labels = LabelVolume(GridMeta((6, 6, 6)), np.full((6, 6, 6), 2, dtype=np.uint8))
        soft = one_hot_soft(labels, sigma=1.0)
        assert np.allclose(soft.channels[..., 2], 1.0)
        for c in (0, 1, 3):
            assert np.allclose(soft.channels[..., c], 0.0)

    def test_sigma_zero_is_hard_one_hot(self, rng):
        labels = LabelVolume(GridMeta((5, 5, 5)), rng.integers(0, 4, size=(5, 5, 5)))
        soft = one_hot_soft(labels, sigma=0.0)
        recovered = np.argmax(soft.channels, axis=3)
        assert np.array_equal(recovered, labels.labels)
        assert set(np.unique(soft.channels)) == {0.0, 1.0}

    def test_channels_sum_to_one(self, rng):
        labels = LabelVolume(GridMeta((7, 6, 5)), rng.integers(0, 4, size=(7, 6, 5)))
        soft = one_hot_soft(labels, sigma=1.5)
        sums = soft.channels.sum(axis=3)
        assert np.abs(sums - 1.0).max() <= 1e-4
        assert soft.channels.min() >= 0.0
        assert soft.channels.max() <= 1.0

    def test_negative_sigma_rejected(self, rng):
        labels = LabelVolume(GridMeta((4, 4, 4)), rng.integers(0, 4, size=(4, 4, 4)))
        with pytest.raises(InvalidInputError):
            one_hot_soft(labels, sigma=-1.0)


class TestResampleLevel:
    def test_factor_one_is_identity(self, rng):
        vol = make_volume(rng.normal(size=(4, 4, 4)))
        out = resample_level(vol, 1)
        assert np.array_equal(out.values, vol.values)

    def test_constant_volume_stays_constant(self):
        vol = make_volume(np.full((8, 8, 8), 3.25))
        out = resample_level(vol, 2)
        assert out.meta.dims == (4, 4, 4)
        assert np.allclose(out.values, 3.25)

    def test_tiny_volume_mean(self):
        vol = make_volume(np.arange(8, dtype=float).reshape(2, 2, 2))
        out = resample_level(vol, 2)
        assert out.meta.dims == (1, 1, 1)
        assert out.values[0, 0, 0] == pytest.approx(3.5)

    def test_bad_factor_rejected(self, rng):
        vol = make_volume(rng.normal(size=(4, 4, 4)))
        with pytest.raises(InvalidInputError):
            resample_level(vol, 0)

    def test_block_means_match_manual(self, rng):
        values = rng.normal(size=(5, 4, 6))
        vol = make_volume(values)
        out = resample_level(vol, 2)
        assert out.meta.dims == (3, 2, 3)
        # partial block at the x edge averages only the voxels it contains
        assert out.values[2, 0, 0] == pytest.approx(values[4, :2, :2].mean())
        assert out.values[0, 1, 2] == pytest.approx(values[:2, 2:4, 4:6].mean())
        assert out.meta.spacing == (2.0, 2.0, 2.0)
