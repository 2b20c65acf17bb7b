import numpy as np
import pytest

from conftest import random_labels
from acreg.errors import DivergenceError, InvalidInputError
from acreg.loss import LossWeights
from acreg.optimizer import (
    OptimizerConfig,
    _downsample_labels,
    _upsample_velocity,
    estimate_velocity,
)
from acreg.transform import integrate_svf
from acreg.volume import one_hot_soft


class TestOptimizerConfig:
    def test_defaults_valid(self):
        cfg = OptimizerConfig()
        assert cfg.pyramid_factors == (4, 2, 1)
        assert cfg.ncc_windows == (5, 7, 9)
        assert cfg.weights == LossWeights()

    def test_explicit_windows(self):
        cfg = OptimizerConfig(pyramid_factors=(2, 1), ncc_windows=(5, 7))
        assert cfg.ncc_windows == (5, 7)

    def test_bad_factors_rejected(self):
        with pytest.raises(InvalidInputError):
            OptimizerConfig(pyramid_factors=(4, 2))
        with pytest.raises(InvalidInputError):
            OptimizerConfig(pyramid_factors=(2, 2, 1))

    def test_bad_learning_rate_rejected(self):
        with pytest.raises(InvalidInputError):
            OptimizerConfig(learning_rate=0.0)

    def test_window_length_mismatch_rejected(self):
        with pytest.raises(InvalidInputError):
            OptimizerConfig(pyramid_factors=(2, 1), ncc_windows=(5, 7, 9))


class TestPyramidHelpers:
    def test_upsample_constant_field_scales_by_ratio(self):
        coarse = np.zeros((4, 4, 4, 3))
        coarse[:] = (0.5, -1.0, 2.0)
        fine = _upsample_velocity(coarse, coarse_factor=4, fine_factor=2, fine_dims=(8, 8, 8))
        assert fine.shape == (8, 8, 8, 3)
        assert np.allclose(fine, np.array([1.0, -2.0, 4.0]))

    def test_downsample_labels_picks_block_centers(self):
        labels = np.zeros((4, 4, 4), dtype=np.uint8)
        labels[2:, :, :] = 3
        out = _downsample_labels(labels, 2)
        assert out.shape == (2, 2, 2)
        # centers at coordinates 0.5 and 2.5 round up to rows 1 and 3
        assert out[0, 0, 0] == labels[1, 1, 1]
        assert out[1, 0, 0] == labels[3, 1, 1]


class TestEstimateVelocity:
    def small_cfg(self, **kw):
        base = dict(pyramid_factors=(2, 1), ncc_windows=(3, 5), max_iterations=25)
        base.update(kw)
        return OptimizerConfig(**base)

    def test_identical_pair_stays_still(self, rng):
        fixed = random_labels(rng, (12, 12, 12))
        soft = one_hot_soft(fixed, 1.0)
        v, trace = estimate_velocity(soft, soft, fixed, self.small_cfg())
        assert np.linalg.norm(v.v, axis=3).mean() < 0.05
        assert trace[-1].loss.sim_term >= 0.99

    def test_descent_within_single_level(self, rng):
        moving = random_labels(rng, (12, 12, 12))
        fixed = random_labels(np.random.default_rng(4), (12, 12, 12))
        cfg = OptimizerConfig(pyramid_factors=(1,), ncc_windows=(5,), max_iterations=30)
        v, trace = estimate_velocity(one_hot_soft(moving, 1.0), one_hot_soft(fixed, 1.0),
                                     fixed, cfg)
        assert trace[-1].loss.total <= trace[0].loss.total
        best = min(e.loss.total for e in trace)
        assert best == min(e.loss.total for e in trace if e.level == 1)

    def test_trace_levels_and_iterations(self, rng):
        fixed = random_labels(rng, (12, 12, 12))
        soft = one_hot_soft(fixed, 1.0)
        v, trace = estimate_velocity(soft, soft, fixed, self.small_cfg(max_iterations=5))
        assert {e.level for e in trace} == {2, 1}
        for level in (2, 1):
            iters = [e.iteration for e in trace if e.level == level]
            assert iters == sorted(iters)
            assert iters[0] == 0

    def test_deterministic(self, rng):
        moving = random_labels(rng, (10, 10, 10))
        fixed = random_labels(np.random.default_rng(8), (10, 10, 10))
        cfg = self.small_cfg(max_iterations=8)
        v1, t1 = estimate_velocity(one_hot_soft(moving, 1.0), one_hot_soft(fixed, 1.0), fixed, cfg)
        v2, t2 = estimate_velocity(one_hot_soft(moving, 1.0), one_hot_soft(fixed, 1.0), fixed, cfg)
        assert np.array_equal(v1.v, v2.v)
        assert [e.loss.total for e in t1] == [e.loss.total for e in t2]

    def test_divergence_reported_with_iteration(self, rng):
        moving = random_labels(rng, (10, 10, 10))
        fixed = random_labels(np.random.default_rng(3), (10, 10, 10))
        cfg = self.small_cfg(learning_rate=1e160, max_iterations=10)
        with pytest.raises(DivergenceError) as exc:
            with np.errstate(over="ignore", invalid="ignore"):
                estimate_velocity(one_hot_soft(moving, 1.0), one_hot_soft(fixed, 1.0),
                                  fixed, cfg)
        assert exc.value.iteration is not None

    def test_translation_recovery(self):
        # phantom shifted by two voxels; the estimated flow should undo it
        from acreg.phantom import PhantomSpec, make_phantom_labels
        from acreg.transform import DisplacementField, warp_labels

        phantom = make_phantom_labels(PhantomSpec(size=32, seed=2, amplitude=0, sigma=6))
        u = np.zeros((32, 32, 32, 3))
        u[:] = (2.0, 0.0, 0.0)
        moving = warp_labels(phantom, DisplacementField(phantom.meta, u))
        cfg = OptimizerConfig(max_iterations=400,
                              weights=LossWeights(1.0, 0.05, 0.02))
        v, _ = estimate_velocity(one_hot_soft(moving, 1.0), one_hot_soft(phantom, 1.0),
                                 phantom, cfg)
        phi = integrate_svf(v, cfg.squaring_steps)
        inner = (slice(6, -6),) * 3
        err = np.linalg.norm(phi.u[inner] - np.array([-2.0, 0.0, 0.0]), axis=-1)
        assert err.mean() < 0.5
