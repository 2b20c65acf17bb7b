"""Per-pair velocity estimation by coarse-to-fine adaptive-moment descent.

One registration pass optimizes a dense stationary velocity field directly
against the objective in :mod:`acreg.loss`. A resolution pyramid (block
averaging of the soft maps) handles displacements larger than the NCC window:
each level starts from the upsampled result of the previous one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _interp
from .errors import DivergenceError, InvalidInputError
from .loss import LossBreakdown, LossWeights, _loss_arrays, fixed_ncc_stats
from .transform import VelocityField
from .volume import LabelVolume, SoftTissueMap, _block_reduce_mean, check_same_grid


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for one velocity-estimation pass."""

    learning_rate: float = 1e-2
    max_iterations: int = 200
    pyramid_factors: tuple = (4, 2, 1)
    squaring_steps: int = 7
    ncc_window: int = 9
    ncc_windows: tuple | None = None
    weights: LossWeights = field(default_factory=LossWeights)
    convergence_tol: float = 1e-5
    convergence_window: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise InvalidInputError(f"learning rate must be > 0, got {self.learning_rate}")
        if int(self.max_iterations) < 1:
            raise InvalidInputError("max_iterations must be >= 1")
        factors = tuple(int(f) for f in self.pyramid_factors)
        if not factors or factors[-1] != 1 or any(f <= g for f, g in zip(factors, factors[1:])):
            raise InvalidInputError(
                f"pyramid factors must be strictly decreasing and end at 1, got {self.pyramid_factors}")
        object.__setattr__(self, "pyramid_factors", factors)
        if int(self.squaring_steps) < 0:
            raise InvalidInputError("squaring_steps must be >= 0")
        windows = self.ncc_windows
        if windows is None:
            # shrink the window two voxels per coarser level, never below 3
            n = len(factors)
            windows = tuple(max(3, int(self.ncc_window) - 2 * (n - 1 - i)) for i in range(n))
        else:
            windows = tuple(int(w) for w in windows)
            if len(windows) != len(factors):
                raise InvalidInputError("ncc_windows must match pyramid_factors in length")
        if any(w < 3 or w % 2 == 0 for w in windows):
            raise InvalidInputError(f"NCC windows must be odd and >= 3, got {windows}")
        object.__setattr__(self, "ncc_windows", windows)


@dataclass(frozen=True)
class TraceEntry:
    """Loss recorded at one optimizer iteration of one pyramid level."""

    level: int
    iteration: int
    loss: LossBreakdown


def _level_dims(dims, factor):
    return tuple(-(-d // factor) for d in dims)


def _downsample_channels(channels, factor):
    if factor == 1:
        return np.ascontiguousarray(channels)
    out = np.stack([_block_reduce_mean(channels[..., c], factor)
                    for c in range(channels.shape[3])], axis=-1)
    return np.ascontiguousarray(out)


def _block_center_points(dims, factor):
    axes = [np.arange(n, dtype=np.float64) * factor + (factor - 1) / 2.0
            for n in _level_dims(dims, factor)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


def _downsample_labels(labels, factor):
    if factor == 1:
        return labels
    dims = _level_dims(labels.shape, factor)
    pts = _block_center_points(labels.shape, factor)
    out = np.empty(pts.shape[0], dtype=np.uint8)
    _interp.sample_nearest_pts(labels, pts, out)
    return out.reshape(dims)


def _upsample_velocity(varr, coarse_factor, fine_factor, fine_dims):
    """Trilinear upsampling of the components, rescaled to fine voxel units."""
    ratio = coarse_factor / fine_factor
    axes = []
    for d in range(3):
        full = np.arange(fine_dims[d], dtype=np.float64) * fine_factor + (fine_factor - 1) / 2.0
        axes.append((full - (coarse_factor - 1) / 2.0) / coarse_factor)
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    out = np.empty((pts.shape[0], 3))
    _interp.sample_pts(np.ascontiguousarray(varr), pts, out)
    return np.ascontiguousarray(out.reshape(fine_dims + (3,)) * ratio)


def _converged(totals, tol, window):
    if len(totals) <= window:
        return False
    old = totals[-1 - window]
    return abs(totals[-1] - old) <= tol * max(abs(old), 1e-12)


def estimate_velocity(moving_soft: SoftTissueMap, fixed_soft: SoftTissueMap,
                      fixed_labels: LabelVolume, cfg: OptimizerConfig | None = None):
    """Estimate the velocity field aligning ``moving_soft`` to ``fixed_soft``.

    Returns ``(velocity, trace)`` where ``trace`` lists the loss per iteration
    and pyramid level. At each level the iterate with the lowest total seen is
    kept, so the result never ends worse than the level's starting point.

    Raises
    ------
    DivergenceError
        If the loss becomes non-finite, reporting level and iteration.
    """
    cfg = cfg or OptimizerConfig()
    check_same_grid(moving_soft, fixed_soft, "moving and fixed maps")
    check_same_grid(moving_soft, fixed_labels, "soft maps and labels")

    meta = moving_soft.meta
    spacing = meta.spacing
    trace = []
    varr = None
    prev_factor = None

    for level_idx, factor in enumerate(cfg.pyramid_factors):
        dims = _level_dims(meta.dims, factor)
        level_spacing = tuple(s * factor for s in spacing)
        mov = _downsample_channels(moving_soft.channels, factor)
        fix = _downsample_channels(fixed_soft.channels, factor)
        labels = _downsample_labels(fixed_labels.labels, factor)
        window = cfg.ncc_windows[level_idx]
        fix_stats = fixed_ncc_stats(fix, window)

        if varr is None:
            varr = np.zeros(dims + (3,))
        else:
            varr = _upsample_velocity(varr, prev_factor, factor, dims)

        m = np.zeros_like(varr)
        s = np.zeros_like(varr)
        totals = []
        best_total = math.inf
        best_varr = varr
        step = 0
        while True:
            sim, reg_v, reg_j, total, grad = _loss_arrays(
                varr, mov, fix, labels, level_spacing, cfg.weights,
                cfg.squaring_steps, window, want_grad=True, fixed_stats=fix_stats)
            if not np.isfinite(total):
                raise DivergenceError(
                    f"non-finite loss at level {factor}, iteration {step}",
                    level=factor, iteration=step)
            trace.append(TraceEntry(factor, step,
                                    LossBreakdown(sim, reg_v, reg_j, total, cfg.weights)))
            totals.append(total)
            if total < best_total:
                best_total = total
                best_varr = varr.copy()
            if step >= cfg.max_iterations or _converged(totals, cfg.convergence_tol,
                                                        cfg.convergence_window):
                break
            step += 1
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
            s = cfg.beta2 * s + (1.0 - cfg.beta2) * grad * grad
            m_hat = m / (1.0 - cfg.beta1 ** step)
            s_hat = s / (1.0 - cfg.beta2 ** step)
            varr = varr - cfg.learning_rate * m_hat / (np.sqrt(s_hat) + cfg.adam_eps)

        varr = best_varr
        prev_factor = factor

    return VelocityField(meta, varr), trace
