"""Registration objective and its exact gradient with respect to the velocity.

The objective combines a similarity term (localized NCC between the warped
moving soft map and the fixed soft map), an L2 penalty on the velocity
gradient, and a tissue-aware penalty on the Jacobian determinant of the
integrated deformation:

    total = lambda_sim * (-sim) + lambda_v * velocity_reg + lambda_j * jacobian_reg

``loss_gradient`` backpropagates by hand through every stage (NCC window
statistics, trilinear warp coordinates, the scaling-and-squaring chain, and
both regularizers), so it is the exact gradient of the discrete objective as
implemented, not of an idealized continuous one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _interp
from .errors import InvalidInputError
from .metrics import NCC_EPSILON, _box_sum, _check_window, _count_map
from .transform import (
    VelocityField,
    _axis_gradient_adjoint,
    _det3,
    _displacement_jacobian,
    _integrate_u,
)
from .volume import (
    BACKGROUND,
    CSF,
    GRAY_MATTER,
    WHITE_MATTER,
    LabelVolume,
    SoftTissueMap,
    check_same_grid,
)

MIN_REGIONS = (GRAY_MATTER, WHITE_MATTER)
MEAN_REGIONS = (BACKGROUND, CSF)


@dataclass(frozen=True)
class LossWeights:
    """Nonnegative weights for the three objective terms."""

    lambda_sim: float = 1.0
    lambda_v: float = 1.0
    lambda_j: float = 1.0

    def __post_init__(self):
        for name in ("lambda_sim", "lambda_v", "lambda_j"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value < 0:
                raise InvalidInputError(f"{name} must be a finite value >= 0, got {value}")
            object.__setattr__(self, name, value)


@dataclass(frozen=True)
class LossBreakdown:
    """The three objective terms (unweighted) plus their weighted total."""

    sim_term: float
    velocity_reg_term: float
    jacobian_reg_term: float
    total: float
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        w = self.weights
        expected = (w.lambda_sim * (-self.sim_term)
                    + w.lambda_v * self.velocity_reg_term
                    + w.lambda_j * self.jacobian_reg_term)
        if abs(self.total - expected) > 1e-10 * max(1.0, abs(expected)):
            raise InvalidInputError(
                f"inconsistent breakdown: total {self.total} vs terms {expected}")


def _velocity_reg_value_grad(v, want_grad):
    # Mean over voxels of the summed squared forward differences of all
    # components; the difference at the last slice of each axis is zero.
    n_vox = v[..., 0].size
    value = 0.0
    grad = np.zeros_like(v) if want_grad else None
    for axis in range(3):
        lo = [slice(None)] * 4
        hi = [slice(None)] * 4
        lo[axis] = slice(0, v.shape[axis] - 1)
        hi[axis] = slice(1, v.shape[axis])
        diff = v[tuple(hi)] - v[tuple(lo)]
        value += float(np.sum(diff * diff))
        if want_grad:
            grad[tuple(hi)] += (2.0 / n_vox) * diff
            grad[tuple(lo)] -= (2.0 / n_vox) * diff
    return value / n_vox, grad


def velocity_reg(v: VelocityField) -> float:
    """Mean squared forward-difference gradient of the velocity field."""
    value, _ = _velocity_reg_value_grad(v.v, want_grad=False)
    return value


def _region_masks(labels):
    return {lab: labels == lab for lab in MIN_REGIONS + MEAN_REGIONS}


def _jacobian_reg_value_grad(j, labels, want_grad):
    # GM/WM regions penalize the deviation of min(J) from 1, BG/CSF the
    # deviation of mean(J); each term is exp(|stat - 1|) - 1 and the four
    # region contributions are summed.
    value = 0.0
    grad = np.zeros_like(j) if want_grad else None
    flat_j = j.reshape(-1)
    flat_labels = labels.reshape(-1)
    for lab in MIN_REGIONS + MEAN_REGIONS:
        idx = np.flatnonzero(flat_labels == lab)
        if idx.size == 0:
            continue
        region = flat_j[idx]
        if lab in MIN_REGIONS:
            k = int(np.argmin(region))
            stat = float(region[k])
        else:
            stat = float(region.mean())
        dev = abs(stat - 1.0)
        value += np.expm1(dev)
        if want_grad:
            # min: subgradient at the first argmin voxel in scan order;
            # mean: spread uniformly over the region
            slope = np.sign(stat - 1.0) * np.exp(dev)
            gflat = grad.reshape(-1)
            if lab in MIN_REGIONS:
                gflat[idx[k]] += slope
            else:
                gflat[idx] += slope / idx.size
    return value, grad


def jacobian_reg(j, labels: LabelVolume) -> float:
    """Tissue-aware penalty on the Jacobian determinant map ``j``."""
    check_same_grid(j, labels, "Jacobian map and labels")
    value, _ = _jacobian_reg_value_grad(j.values, labels.labels, want_grad=False)
    return value


def fixed_ncc_stats(channels, window):
    """Precompute the fixed image's per-channel window statistics.

    The fixed side never changes during optimization, so callers evaluating
    the loss repeatedly can hand these to ``total_loss``/``loss_and_gradient``
    via the internal array path instead of recomputing them every call.
    """
    window = _check_window(window)
    n = _count_map(channels.shape[:3], window)
    stats = []
    for c in range(channels.shape[3]):
        b = channels[..., c]
        s2 = _box_sum(b, window)
        var_b = np.maximum(_box_sum(b * b, window) - s2 * s2 / n, 0.0)
        stats.append((s2, var_b))
    return stats


def _ncc_sum_channel(a, b, window, fixed_stats=None):
    """Sum over voxels of the squared local correlation, with backward cache."""
    n = _count_map(a.shape, window)
    s1 = _box_sum(a, window)
    if fixed_stats is None:
        s2 = _box_sum(b, window)
        var_b = np.maximum(_box_sum(b * b, window) - s2 * s2 / n, 0.0)
    else:
        s2, var_b = fixed_stats
    raw_var_a = _box_sum(a * a, window) - s1 * s1 / n
    var_a = np.maximum(raw_var_a, 0.0)
    cross = _box_sum(a * b, window) - s1 * s2 / n
    denom = var_a * var_b + NCC_EPSILON
    cc = cross * cross / denom
    cache = (n, s1, s2, cross, var_a, var_b, denom, raw_var_a > 0.0)
    return float(cc.sum()), cache


def _ncc_sum_channel_grad(a, b, window, cache, cot):
    # Gradient of cot * sum(cc) with respect to the first argument a.
    n, s1, s2, cross, var_a, var_b, denom, active = cache
    d_cross = 2.0 * cross / denom
    d_var_a = np.where(active, -(cross * cross) * var_b / (denom * denom), 0.0)
    g12 = d_cross
    g1 = d_cross * (-s2 / n) + d_var_a * (-2.0 * s1 / n)
    g11 = d_var_a
    grad = b * _box_sum(g12, window) + _box_sum(g1, window) + 2.0 * a * _box_sum(g11, window)
    return cot * grad


def _det3_cofactors(g):
    a00, a01, a02 = 1.0 + g[0][0], g[0][1], g[0][2]
    a10, a11, a12 = g[1][0], 1.0 + g[1][1], g[1][2]
    a20, a21, a22 = g[2][0], g[2][1], 1.0 + g[2][2]
    return [
        [a11 * a22 - a12 * a21, a12 * a20 - a10 * a22, a10 * a21 - a11 * a20],
        [a02 * a21 - a01 * a22, a00 * a22 - a02 * a20, a01 * a20 - a00 * a21],
        [a01 * a12 - a02 * a11, a02 * a10 - a00 * a12, a00 * a11 - a01 * a10],
    ]


def _check_loss_inputs(v, moving_soft, fixed_soft, fixed_labels, steps, window):
    check_same_grid(v, moving_soft, "velocity and moving map")
    check_same_grid(v, fixed_soft, "velocity and fixed map")
    check_same_grid(v, fixed_labels, "velocity and fixed labels")
    if int(steps) != steps or steps < 0:
        raise InvalidInputError(f"squaring steps must be an integer >= 0, got {steps}")
    _check_window(window)
    if min(v.meta.dims) < 3:
        raise InvalidInputError(f"loss needs at least 3 voxels per axis, got dims {v.meta.dims}")


def _loss_arrays(varr, mov_ch, fix_ch, labels, spacing, w, steps, window, want_grad,
                 fixed_stats=None):
    """Array-level objective; returns (sim, reg_v, reg_j, total, grad or None)."""
    dims = varr.shape[:3]
    n_vox = varr[..., 0].size
    n_ch = mov_ch.shape[3]

    tape = [] if want_grad else None
    u = _integrate_u(varr, steps, tape=tape)

    warped = np.empty_like(mov_ch)
    _interp.warp(mov_ch, u, warped)

    cc_sums = []
    caches = []
    for c in range(n_ch):
        s, cache = _ncc_sum_channel(warped[..., c], fix_ch[..., c], window,
                                    fixed_stats[c] if fixed_stats else None)
        cc_sums.append(s)
        caches.append(cache)
    sim = float(np.sum(cc_sums)) / (n_vox * n_ch)

    g = _displacement_jacobian(u, spacing)
    j = _det3(g)
    reg_j, grad_j_map = _jacobian_reg_value_grad(j, labels, want_grad)
    reg_v, grad_v_direct = _velocity_reg_value_grad(varr, want_grad)

    total = w.lambda_sim * (-sim) + w.lambda_v * reg_v + w.lambda_j * reg_j
    if not want_grad:
        return sim, reg_v, reg_j, total, None

    # similarity path: d total / d warped channels, then through the warp
    # coordinates onto the displacement
    cot_sim = -w.lambda_sim / (n_vox * n_ch)
    grad_warped = np.empty_like(warped)
    for c in range(n_ch):
        grad_warped[..., c] = _ncc_sum_channel_grad(
            warped[..., c], fix_ch[..., c], window, caches[c], cot_sim)
    grad_u = np.zeros(dims + (3,))
    _interp.warp_coord_grad(mov_ch, u, grad_warped, grad_u)

    # Jacobian path: d total / d J through the determinant cofactors onto the
    # finite-difference stencils of the displacement
    if w.lambda_j != 0.0 and grad_j_map is not None:
        gj = w.lambda_j * grad_j_map
        cof = _det3_cofactors(g)
        for c in range(3):
            acc = np.zeros(dims)
            for d in range(3):
                acc += _axis_gradient_adjoint(gj * cof[c][d] * spacing[c], d, spacing[d])
            grad_u[..., c] += acc

    # back through the squaring chain: u_{k+1}(x) = u_k(x + u_k(x)) + u_k(x)
    if steps > 0:
        g_values = np.empty_like(grad_u)
        g_coords = np.empty_like(grad_u)
        for k in range(steps - 1, -1, -1):
            uk = tape[k]
            g_values[:] = 0.0
            g_coords[:] = 0.0
            _interp.warp_adjoint(uk, uk, grad_u, g_values, g_coords)
            grad_u += g_values
            grad_u += g_coords

    grad = grad_u / float(2 ** steps)
    if w.lambda_v != 0.0:
        grad += w.lambda_v * grad_v_direct
    return sim, reg_v, reg_j, total, grad


def total_loss(v: VelocityField, moving_soft: SoftTissueMap, fixed_soft: SoftTissueMap,
               fixed_labels: LabelVolume, weights: LossWeights | None = None,
               steps: int = 7, window: int = 9) -> LossBreakdown:
    """Evaluate the full objective for a velocity field."""
    w = weights or LossWeights()
    _check_loss_inputs(v, moving_soft, fixed_soft, fixed_labels, steps, window)
    sim, reg_v, reg_j, total, _ = _loss_arrays(
        np.ascontiguousarray(v.v), moving_soft.channels, fixed_soft.channels,
        fixed_labels.labels, v.meta.spacing, w, int(steps), int(window), want_grad=False)
    return LossBreakdown(sim, reg_v, reg_j, total, w)


def loss_and_gradient(v: VelocityField, moving_soft: SoftTissueMap, fixed_soft: SoftTissueMap,
                      fixed_labels: LabelVolume, weights: LossWeights | None = None,
                      steps: int = 7, window: int = 9):
    """Objective value and its exact gradient, as (LossBreakdown, VelocityField)."""
    w = weights or LossWeights()
    _check_loss_inputs(v, moving_soft, fixed_soft, fixed_labels, steps, window)
    sim, reg_v, reg_j, total, grad = _loss_arrays(
        np.ascontiguousarray(v.v), moving_soft.channels, fixed_soft.channels,
        fixed_labels.labels, v.meta.spacing, w, int(steps), int(window), want_grad=True)
    return LossBreakdown(sim, reg_v, reg_j, total, w), VelocityField(v.meta, grad)


def loss_gradient(v: VelocityField, moving_soft: SoftTissueMap, fixed_soft: SoftTissueMap,
                  fixed_labels: LabelVolume, weights: LossWeights | None = None,
                  steps: int = 7, window: int = 9) -> VelocityField:
    """Exact gradient of ``total_loss`` with respect to the velocity field."""
    _, grad = loss_and_gradient(v, moving_soft, fixed_soft, fixed_labels, weights, steps, window)
    return grad
